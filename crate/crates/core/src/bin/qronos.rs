fn main() {
    std::process::exit(qronos::cli::run_from_env());
}
