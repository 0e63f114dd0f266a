fn main() {
    std::process::exit(calibrated_ensembles::cli::run_from_args(std::env::args_os()));
}
