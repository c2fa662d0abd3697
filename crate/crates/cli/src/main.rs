fn main() {
    std::process::exit(pnma_cli::dispatch(std::env::args_os()));
}
