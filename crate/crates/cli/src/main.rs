use clap::Parser;

fn main() {
    let level = std::env::var("XCB_LOG").unwrap_or_else(|_| "error".into());
    env_logger::Builder::new().parse_filters(&level).format_timestamp(None).init();
    if let Err(e) = xcb_cli::run(xcb_cli::Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(xcb_cli::exit_code(&e));
    }
}
