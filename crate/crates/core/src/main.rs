fn main() {
    std::process::exit(lqmdp::cli::main_with(std::env::args_os()));
}
