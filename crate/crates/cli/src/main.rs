fn main() {
    std::process::exit(cfmdp_cli::run(std::env::args().collect()));
}
