fn main() {
    std::process::exit(fairalloc::cli::dispatch(std::env::args()));
}
