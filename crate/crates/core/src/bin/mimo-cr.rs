fn main() {
    std::process::exit(mimo_cr::app::run(std::env::args_os()));
}
