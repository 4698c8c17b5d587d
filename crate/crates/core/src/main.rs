fn main() {
    std::process::exit(mango::cli::run(std::env::args_os()));
}
