fn main() {
    std::process::exit(fpr_core::cli::run(std::env::args_os()));
}
