use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use sepex::entropy::EntropyProfile;
use sepex::error::{Error, Result};
use sepex::harness::config::{CheckType, ExperimentConfig, OutputFormat};
use sepex::harness::run::{entropy_profiles, run_check};
use sepex::hoeffding::decompose;
use sepex::lattice::{transversal_partition, verify_partition, EVector, Shape};
use sepex::sampler::sample_array;

#[derive(Parser)]
#[command(name = "sepex", version, about = "Maximal-inequality checks for separately exchangeable arrays")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write the output into this directory instead of stdout
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    format: Option<OutputFormat>,
}

#[derive(Subcommand)]
enum Command {
    /// Transversal partition of I_{N,e}
    Partition {
        /// Comma-separated dimensions, e.g. "3,4"
        #[arg(long)]
        shape: String,
        /// Bit string, e.g. "10"
        #[arg(long)]
        e: String,
    },
    /// Draw one array X_i, i ∈ [N], for the first configured shape
    Sample {
        #[arg(long)]
        shape: Option<String>,
    },
    /// Hoeffding components of one class member on the first configured shape
    Decompose {
        #[arg(long)]
        shape: Option<String>,
    },
    /// Entropy integral J_e(δ) on δ = 1/n, …, 1 for every configured direction
    Entropy {
        #[arg(long, default_value_t = 20)]
        grid: usize,
    },
    CheckGlobal,
    CheckLocal,
    CheckVc,
    CheckIid,
    CheckLemmas,
}

fn parse_shape(s: &str) -> Result<Shape> {
    let dims = s
        .split(',')
        .map(|d| d.trim().parse::<usize>().map_err(|_| Error::Config(format!("bad shape {s:?}"))))
        .collect::<Result<Vec<_>>>()?;
    Shape::new(dims)
}

fn load_config(common: &Common, check: CheckType) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            ExperimentConfig::from_toml(&text)?
        }
        None => ExperimentConfig::default_for(check),
    };
    if let Some(seed) = common.seed {
        cfg.seed = Some(seed);
    }
    if let Some(format) = common.format {
        cfg.output.format = format;
    }
    if let Some(dir) = &common.out {
        cfg.output.dir = Some(dir.clone());
    }
    Ok(cfg)
}

/// Sets the check of a config used by a check subcommand; a config naming
/// a different check is rejected.
fn with_check(mut cfg: ExperimentConfig, check: CheckType) -> Result<ExperimentConfig> {
    match cfg.check {
        Some(c) if c != check => {
            return Err(Error::Config(format!("config is for check {c}, not {check}")));
        }
        _ => cfg.check = Some(check),
    }
    Ok(cfg)
}

fn emit(dir: Option<&Path>, file: &str, body: &[u8]) -> Result<()> {
    match dir {
        Some(d) => {
            fs::create_dir_all(d)?;
            fs::write(d.join(file), body)?;
        }
        None => io::stdout().write_all(body)?,
    }
    Ok(())
}

fn json_bytes(v: &serde_json::Value) -> Result<Vec<u8>> {
    Ok((serde_json::to_string_pretty(v)? + "\n").into_bytes())
}

fn check_type(cmd: &Command) -> Option<CheckType> {
    match cmd {
        Command::CheckGlobal => Some(CheckType::Global),
        Command::CheckLocal => Some(CheckType::Local),
        Command::CheckVc => Some(CheckType::Vc),
        Command::CheckIid => Some(CheckType::Iid),
        Command::CheckLemmas => Some(CheckType::Lemmas),
        _ => None,
    }
}

/// Returns whether the command passed.
fn run(cli: Cli) -> Result<bool> {
    let common = &cli.common;
    if let Some(check) = check_type(&cli.command) {
        let cfg = with_check(load_config(common, check)?, check)?;
        let report = run_check(&cfg)?;
        let dir = cfg.output.dir.as_deref();
        match cfg.output.format {
            OutputFormat::Json => emit(dir, "report.json", report.to_json_string()?.as_bytes())?,
            OutputFormat::Csv => {
                let mut buf = Vec::new();
                report.write_csv(&mut buf)?;
                emit(dir, "rows.csv", &buf)?;
            }
        }
        let verdict = if report.pass { "pass" } else { "FAIL" };
        match report.stability {
            Some(s) => eprintln!("{}: {verdict} (stability {s:.3}, threshold {})", check, report.stability_threshold),
            None => eprintln!("{}: {verdict}", check),
        }
        return Ok(report.pass);
    }

    let cfg = || -> Result<ExperimentConfig> {
        let mut c = load_config(common, CheckType::Global)?;
        c.check.get_or_insert(CheckType::Global);
        Ok(c)
    };
    let format = common.format.unwrap_or(OutputFormat::Json);
    let dir = common.out.as_deref();
    match cli.command {
        Command::Partition { shape, e } => {
            let shape = parse_shape(&shape)?;
            let e = EVector::parse(&e).map_err(|err| Error::Config(err.to_string()))?;
            shape.check_dim(&e).map_err(|err| Error::Config(err.to_string()))?;
            let p = transversal_partition(&shape, &e)?;
            let r = verify_partition(&shape, &e, &p);
            match format {
                OutputFormat::Json => {
                    let mut v = p.to_json(&shape, &e);
                    v["verified"] = json!(r.passed());
                    emit(dir, "partition.json", &json_bytes(&v)?)?;
                }
                OutputFormat::Csv => {
                    let mut out = String::from("group,index\n");
                    for (g, tuples) in p.groups.iter().enumerate() {
                        for t in tuples {
                            out.push_str(&format!("{},\"{}\"\n", g + 1, t));
                        }
                    }
                    emit(dir, "partition.csv", out.as_bytes())?;
                }
            }
            Ok(r.passed())
        }
        Command::Sample { shape } => {
            let cfg = cfg()?;
            let shape = match shape {
                Some(s) => parse_shape(&s)?,
                None => cfg.shapes.first().cloned().ok_or_else(|| Error::Config("no shapes configured".into()))?,
            };
            let model = cfg.model.build(shape.dim())?;
            let sample = sample_array(model.as_ref(), &shape, cfg.seed()?)?;
            match format {
                OutputFormat::Csv => {
                    let mut buf = Vec::new();
                    sample.write_csv(&mut buf)?;
                    emit(dir, "sample.csv", &buf)?;
                }
                OutputFormat::Json => {
                    let v = json!({
                        "shape": shape.dims(),
                        "seed": sample.seed,
                        "model": model.description(),
                        "values": sample.values,
                    });
                    emit(dir, "sample.json", &json_bytes(&sepex::harness::report::round_floats(v))?)?;
                }
            }
            Ok(true)
        }
        Command::Decompose { shape } => {
            let cfg = cfg()?;
            let shape = match shape {
                Some(s) => parse_shape(&s)?,
                None => cfg.shapes.first().cloned().ok_or_else(|| Error::Config("no shapes configured".into()))?,
            };
            let model = cfg.model.build(shape.dim())?;
            let class = cfg.class.build(model.as_ref())?;
            let map = decompose(model.as_ref(), &class, cfg.member, &shape, cfg.seed()?, cfg.inner_draws)?;
            match format {
                OutputFormat::Json => emit(dir, "components.json", &json_bytes(&map.to_json())?)?,
                OutputFormat::Csv => {
                    let mut out = String::from("e,value\n");
                    for (e, v) in &map.components {
                        out.push_str(&format!("{e},{v:e}\n"));
                    }
                    emit(dir, "components.csv", out.as_bytes())?;
                }
            }
            Ok(true)
        }
        Command::Entropy { grid } => {
            if grid == 0 {
                return Err(Error::Config("entropy grid must be positive".into()));
            }
            let cfg = cfg()?;
            let profiles = entropy_profiles(&cfg, &EntropyProfile::uniform_grid(grid))?;
            match format {
                OutputFormat::Json => {
                    let v: Vec<_> = profiles
                        .iter()
                        .map(|(e, p, rec)| json!({"e": e, "profile": p, "route": rec}))
                        .collect();
                    emit(dir, "entropy.json", &json_bytes(&sepex::harness::report::round_floats(json!(v)))?)?;
                }
                OutputFormat::Csv => {
                    for (e, p, _) in &profiles {
                        let mut buf = Vec::new();
                        p.write_csv(&mut buf)?;
                        match dir {
                            Some(_) => emit(dir, &format!("entropy_{e}.csv"), &buf)?,
                            None => {
                                println!("# e = {e}");
                                emit(None, "", &buf)?;
                            }
                        }
                    }
                }
            }
            Ok(true)
        }
        _ => unreachable!("check commands handled above"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("sepex: {e}");
            ExitCode::from(2)
        }
    }
}
