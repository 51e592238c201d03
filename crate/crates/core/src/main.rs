fn main() {
    std::process::exit(rendersynth::cli::run(std::env::args_os()));
}
