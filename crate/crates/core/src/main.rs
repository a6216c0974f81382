use std::process::ExitCode;

fn main() -> ExitCode {
    if let Some(raw) = std::env::var_os("MVDET_THREADS") {
        let threads = raw
            .to_str()
            .and_then(|s| s.trim().parse::<usize>().ok())
            .filter(|&n| n > 0);
        let Some(threads) = threads else {
            eprintln!("error: MVDET_THREADS must be a positive integer");
            return ExitCode::from(2);
        };
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match mvdet::cli::run(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
