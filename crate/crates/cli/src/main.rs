use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use sar_flmpc::coordination::{run_mission, ControllerKind};
use sar_flmpc::harness::{
    all_milestones, compare_controllers, export, group_by_controller, load_logs, log_file_name, replay, run_batch,
    write_run, Scenario, WinAdvantageReport,
};
use sar_flmpc::log::MissionLog;
use sar_flmpc::sim::generate_environment;

#[derive(Parser)]
#[command(
    name = "flmpc-sar",
    version,
    about = "Seeded multi-robot search-and-rescue experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (controller, seed) mission of a scenario and write logs.
    Run(RunArgs),
    /// Win/advantage statistics from the logs of a previous run.
    Compare(CompareArgs),
    /// Milestone CSVs, uncertainty images and the report from logs.
    Export(CompareArgs),
    /// Print one mission's trajectory, optionally re-simulating to check it.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Seed range `a..b` (end exclusive) or a single seed; overrides the file.
    #[arg(long, value_parser = parse_seeds)]
    seeds: Option<SeedList>,
    /// Restrict to these controllers; repeat the flag for several.
    #[arg(long = "controller")]
    controllers: Vec<ControllerKind>,
    #[arg(long, default_value_t = default_threads())]
    threads: usize,
}

#[derive(Args)]
struct CompareArgs {
    /// Run directory holding `logs/`.
    #[arg(long)]
    out: PathBuf,
    /// The two controllers to compare, A first; defaults to every controller
    /// found in the logs, in name order.
    #[arg(long = "controller")]
    controllers: Vec<ControllerKind>,
    /// Milestones to decide; defaults to 1 through the human count.
    #[arg(long, value_delimiter = ',')]
    milestones: Vec<usize>,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    controller: ControllerKind,
    #[arg(long)]
    seed: u64,
    /// Re-run the mission from the echoed scenario and require identical bytes.
    #[arg(long)]
    verify: bool,
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

#[derive(Clone, Debug)]
struct SeedList(Vec<u64>);

fn parse_seeds(s: &str) -> std::result::Result<SeedList, String> {
    match s.split_once("..") {
        Some((a, b)) => {
            let a: u64 = a.trim().parse().map_err(|e| format!("bad seed range start: {e}"))?;
            let b: u64 = b.trim().parse().map_err(|e| format!("bad seed range end: {e}"))?;
            if b <= a {
                return Err(format!("empty seed range {a}..{b}"));
            }
            Ok(SeedList((a..b).collect()))
        }
        None => s
            .trim()
            .parse()
            .map(|x| SeedList(vec![x]))
            .map_err(|e| format!("bad seed: {e}")),
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::Compare(args) => {
            let (logs, report) = compare(&args)?;
            if let Some(r) = report {
                print!("{}", r.to_table());
                let path = args.out.join("report.json");
                fs::write(&path, serde_json::to_string_pretty(&r)?).with_context(|| path.display().to_string())?;
            } else {
                println!("{} logs from a single controller; nothing to compare", logs.len());
            }
            Ok(())
        }
        Command::Export(args) => {
            let (logs, report) = compare(&args)?;
            for p in export(&logs, report.as_ref(), &args.out)? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Replay(args) => replay_one(args),
    }
}

fn run(args: RunArgs) -> Result<()> {
    let mut scenario = Scenario::load(&args.scenario)?;
    if let Some(SeedList(seeds)) = args.seeds {
        scenario.seeds = seeds;
    }
    if !args.controllers.is_empty() {
        scenario.controllers = args.controllers;
    }
    scenario.validate()?;
    eprintln!(
        "{}: {} controller(s) x {} seed(s) on {} thread(s), budget {} steps",
        scenario.name,
        scenario.controllers.len(),
        scenario.seeds.len(),
        args.threads,
        scenario.budget_steps()
    );
    let records = run_batch(&scenario, args.threads)?;
    write_run(&records, &scenario, &args.out)?;
    for r in &records {
        let (k, complete, rescued) = r.log.end().unwrap_or_default();
        println!(
            "{:<8} seed {:>4}: {rescued}/{} rescued, {} at step {k}",
            r.controller.as_str(),
            r.seed,
            r.log.header.humans,
            if complete { "complete" } else { "stopped" }
        );
    }
    Ok(())
}

fn compare(args: &CompareArgs) -> Result<(Vec<MissionLog>, Option<WinAdvantageReport>)> {
    let logs = load_logs(&args.out.join("logs"))?;
    if logs.is_empty() {
        bail!("no logs under {}", args.out.join("logs").display());
    }
    let groups = group_by_controller(logs.clone());
    let names: Vec<String> = if args.controllers.is_empty() {
        groups.keys().cloned().collect()
    } else {
        args.controllers.iter().map(|c| c.as_str().to_string()).collect()
    };
    if names.len() < 2 {
        return Ok((logs, None));
    }
    if names.len() > 2 {
        bail!("pick two controllers with --controller (found {})", names.join(", "));
    }
    let get = |n: &str| groups.get(n).with_context(|| format!("no logs for controller {n}"));
    let milestones = if args.milestones.is_empty() {
        all_milestones(&logs)
    } else {
        args.milestones.clone()
    };
    let report = compare_controllers(get(&names[0])?, get(&names[1])?, &milestones)?;
    Ok((logs, Some(report)))
}

fn replay_one(args: ReplayArgs) -> Result<()> {
    let scenario = Scenario::load(&args.out.join("scenario.json"))?;
    let path = args
        .out
        .join("logs")
        .join(log_file_name(args.controller.as_str(), args.seed));
    let log = MissionLog::read(&path)?;
    let env = generate_environment(&scenario.environment, args.seed)?;
    let start: Vec<_> = env.robots().iter().map(|r| r.position).collect();
    if args.verify {
        let fresh = run_mission(env, scenario.config_for(args.controller))?.log;
        if fresh.to_jsonl() != fs::read_to_string(&path).with_context(|| path.display().to_string())? {
            bail!("re-simulated log differs from {}", path.display());
        }
        eprintln!("{}: re-simulation is byte-identical", path.display());
    }
    let rp = replay(&log, &start)?;
    match print_trajectory(&rp.positions) {
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => return Ok(()),
        r => r?,
    }
    eprintln!(
        "{} steps, {} rescues, {} cancels, {} replans",
        rp.steps,
        rp.rescues.len(),
        rp.cancels,
        rp.replans
    );
    Ok(())
}

fn print_trajectory(positions: &[Vec<sar_flmpc::grid::Cell>]) -> io::Result<()> {
    let mut out = io::BufWriter::new(io::stdout().lock());
    let robots = positions.first().map_or(0, Vec::len);
    let header: Vec<String> = (0..robots).map(|r| format!("x{r},y{r}")).collect();
    writeln!(out, "k,{}", header.join(","))?;
    for (k, row) in positions.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|c| format!("{},{}", c.x, c.y)).collect();
        writeln!(out, "{k},{}", cells.join(","))?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_ranges() {
        assert_eq!(parse_seeds("0..3").unwrap().0, vec![0, 1, 2]);
        assert_eq!(parse_seeds("7").unwrap().0, vec![7]);
        assert!(parse_seeds("5..5").is_err());
        assert!(parse_seeds("a..3").is_err());
    }

    #[test]
    fn cli_parses() {
        let cli = Cli::try_parse_from([
            "flmpc-sar",
            "run",
            "--scenario",
            "s.json",
            "--out",
            "o",
            "--seeds",
            "0..4",
            "--controller",
            "smpc",
            "--threads",
            "2",
        ])
        .unwrap();
        match cli.command {
            Command::Run(a) => {
                assert_eq!(a.seeds.unwrap().0.len(), 4);
                assert_eq!(a.controllers, vec![ControllerKind::Smpc]);
                assert_eq!(a.threads, 2);
            }
            _ => panic!("wrong subcommand"),
        }
        assert!(Cli::try_parse_from(["flmpc-sar", "run", "--out", "o"]).is_err());
    }
}
