fn main() {
    std::process::exit(mars_runner::run(std::env::args_os()));
}
