use std::io::Write;
use std::sync::Arc;

use clap::Parser;
use tinydet::cli::{Cli, Command};
use tinydet::commands::{execute, motility_config, resolve_model, tracker_config, Ctx, MotilityFlags};
use tinydet::error::{classify, error_line, CliError};
use tinydet::runs::RunStore;
use tinydet::service::AppState;
use tinydet::settings::{Settings, DEFAULT_PORT};

fn serve(cli: &Cli) -> anyhow::Result<()> {
    let Command::Serve(args) = &cli.command else { unreachable!("serve only") };
    let settings = match &cli.config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    let runs = RunStore::new(settings.runs_dir(cli.runs_dir.as_deref()));
    let ctx = Ctx { settings, runs };
    let model = resolve_model(&args.model, &ctx)?;
    let mut state = AppState::load(&model, ctx.runs.clone())?;
    let s = &ctx.settings;
    state.default_conf = s.conf.unwrap_or(state.default_conf);
    state.default_nms = s.nms_iou.unwrap_or(state.default_nms);
    state.tracker = tracker_config(None, None, s);
    let flags = MotilityFlags { fps: None, um_per_px: None, smooth_window: None, vap_min: None, pr_class: state.motility.pr_class };
    state.motility = motility_config(&flags, s);
    let addr = format!("{}:{}", args.host, args.port.or(s.port).unwrap_or(DEFAULT_PORT));
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(tinydet::service::serve(Arc::new(state), &addr))
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let _ = e.print();
            let err = anyhow::Error::from(CliError::Usage(e.kind().to_string()));
            eprintln!("{}", error_line(&err));
            std::process::exit(2);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Serve(_) => serve(&cli).map(|_| serde_json::Value::Null),
        _ => execute(&cli),
    };
    match result {
        Ok(v) => {
            if !v.is_null() {
                let mut out = std::io::stdout().lock();
                let _ = writeln!(out, "{v}");
            }
        }
        Err(e) => {
            eprintln!("{}", error_line(&e));
            std::process::exit(classify(&e).1);
        }
    }
}
