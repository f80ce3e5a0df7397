fn main() {
    std::process::exit(speech_vae::cli::run(std::env::args_os()));
}
