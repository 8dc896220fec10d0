fn main() {
    std::process::exit(hpf_roi::cli::run(std::env::args_os()));
}
