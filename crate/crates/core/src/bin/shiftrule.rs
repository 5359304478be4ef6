fn main() {
    std::process::exit(shiftrule::cli::run_from_env());
}
