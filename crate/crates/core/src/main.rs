fn main() {
    std::process::exit(gvecf::cli::run(std::env::args_os()));
}
