use std::process::ExitCode;

use clap::Parser;
use ogmc_cli::args::{Cli, Command};
use ogmc_cli::commands::{cmd_bench, cmd_eval, cmd_run, cmd_synth, cmd_tune};
use ogmc_cli::{classify, ExitKind};

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run(cfg) => {
            let r = cmd_run(&cfg)?;
            println!("n_samples={}", r.n_samples);
            println!("n_clusters={}", r.n_clusters);
            println!("n_identities={}", r.n_identities);
            println!("total_wall_ms={:.3}", r.total_wall_ms);
            println!("median_latency_us={:.3}", r.latency.p50_us);
            if let Some(m) = r.metrics {
                print!("{}", m.to_kv());
            }
        }
        Command::Eval(cfg) => {
            let r = cmd_eval(&cfg)?;
            print!("{}", r.metrics.to_kv());
        }
        Command::Tune(args) => {
            let r = cmd_tune(&args)?;
            let p = r.tune.params;
            println!("thr_f={}", p.thr_f);
            println!("thr_wc={}", p.thr_wc);
            println!("thr_sc={}", p.thr_sc);
            println!("ns_r={}", p.ns_r);
            println!("nc_r={}", p.nc_r);
            println!("score={}", r.tune.robustness.score);
        }
        Command::Bench(args) => {
            let r = cmd_bench(&args)?;
            println!("pearson_latency_vs_clusters={}", r.bench.pearson_latency_vs_clusters);
            println!("max_over_median={}", r.bench.max_over_median);
            if let (Some(m), Some(s)) = (r.bench.f_mean, r.bench.f_std) {
                println!("f_mean={m}");
                println!("f_std={s}");
            }
        }
        Command::Synth(args) => {
            let n = cmd_synth(&args)?;
            println!("n_samples={n}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { ExitKind::Usage } else { ExitKind::Success };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(classify(&e) as u8)
        }
    }
}
