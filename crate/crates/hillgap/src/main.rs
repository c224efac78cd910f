fn main() {
    let code = hillgap::cli::run(std::env::args_os());
    std::process::exit(code);
}
