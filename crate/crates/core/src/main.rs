fn main() {
    std::process::exit(railsynth::cli::run(std::env::args_os()));
}
