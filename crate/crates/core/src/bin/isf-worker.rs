//! Standalone in-situ consumer for process deployment.

fn main() {
    let Some(job) = std::env::args_os().nth(1) else {
        eprintln!("usage: isf-worker <job.json>");
        std::process::exit(1);
    };
    std::process::exit(isf_core::orchestrator::worker_main(std::path::Path::new(&job)));
}
