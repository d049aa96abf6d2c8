fn main() {
    std::process::exit(patchslim_cli::run(std::env::args_os()));
}
