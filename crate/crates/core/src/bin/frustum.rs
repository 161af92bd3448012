fn main() {
    std::process::exit(flying_frustum::service::cli::run(std::env::args_os()));
}
