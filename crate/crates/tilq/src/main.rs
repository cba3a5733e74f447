fn main() {
    std::process::exit(tilq::main_with_args(std::env::args_os()));
}
