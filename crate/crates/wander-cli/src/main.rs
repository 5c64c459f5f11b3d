use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use num_rational::Ratio;
use serde_json::json;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use wander_core::driver::{build_with, manifest, Config, DriverError, Manifest, Setup, StageRecord};
use wander_core::exec;
use wander_core::geometry::Region;
use wander_core::schedule::{lambda_schedule, parse_ratio, shifted_schedule, MultiCenterSchedule};
use wander_core::verify::{full_report, iterate, render, Verifier};
use wander_core::C64;

#[derive(Parser)]
#[command(name = "wander", version, about = "Stage polynomials for a wandering domain with a prescribed schedule")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build and verify stages 0..=J, writing manifest.json and report.json.
    Build {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Override the config's stage count.
        #[arg(long)]
        stages: Option<usize>,
    },
    /// Recompute every verdict from a manifest and run the orbit checks.
    Verify {
        #[arg(long)]
        manifest: PathBuf,
        /// Where to write the report (default: report.json beside the manifest).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Labelled orbit of one seed under the last stage, as CSV.
    Orbit {
        #[arg(long)]
        manifest: PathBuf,
        /// `re,im`; defaults to the centre of K_J.
        #[arg(long, allow_hyphen_values = true)]
        seed: Option<String>,
        /// Defaults to N_(J+1).
        #[arg(long)]
        steps: Option<u64>,
        /// Radius of a disk D̂ about 0 to label separately.
        #[arg(long)]
        dhat: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Visiting densities of a schedule, as CSV.
    Density {
        #[arg(long, default_value = "1")]
        lambda: String,
        #[arg(long)]
        k: u64,
        #[arg(long, default_value_t = 0)]
        shift: u64,
        #[arg(long, default_value_t = 1)]
        m_offset: u64,
        /// Comma separated lambdas of a cyclic multi-center schedule.
        #[arg(long)]
        multi: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Escape-time picture of the last stage as a binary PPM.
    Render {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 512)]
        width: usize,
        #[arg(long, default_value_t = 512)]
        height: usize,
        /// Defaults to N_(J+1).
        #[arg(long)]
        iterations: Option<usize>,
        /// `x0,y0,x1,y1`
        #[arg(long, allow_hyphen_values = true, default_value = "-0.5,-0.5,3.5,0.5")]
        viewport: String,
    },
}

/// An input problem: exits with status 2.
#[derive(Debug)]
struct Usage(anyhow::Error);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(e: impl Into<anyhow::Error>) -> anyhow::Error {
    anyhow!(Usage(e.into()))
}

fn main() -> ExitCode {
    exec::init_threads_from_env();
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            let code = if e.downcast_ref::<Usage>().is_some() { 2 } else { 1 };
            let diag = json!({ "error": format!("{e:#}"), "exit": code });
            eprintln!("{diag}");
            ExitCode::from(code)
        }
    }
}

fn run(cmd: Cmd) -> Result<bool> {
    match cmd {
        Cmd::Build { config, out, stages } => cmd_build(config.as_deref(), &out, stages),
        Cmd::Verify { manifest, report } => cmd_verify(&manifest, report),
        Cmd::Orbit { manifest, seed, steps, dhat, out } => cmd_orbit(&manifest, seed, steps, dhat, out),
        Cmd::Density { lambda, k, shift, m_offset, multi, out } => cmd_density(&lambda, k, shift, m_offset, multi, out),
        Cmd::Render { manifest, out, width, height, iterations, viewport } => {
            cmd_render(&manifest, &out, width, height, iterations, &viewport)
        }
    }
}

fn load_config(path: Option<&Path>, stages: Option<usize>) -> Result<Config> {
    let text = match path {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display())).map_err(usage)?,
        None => r#"{"lambda": "1"}"#.to_string(),
    };
    let mut value: serde_json::Value = serde_json::from_str(&text).context("config is not JSON").map_err(usage)?;
    if let (Some(j), Some(obj)) = (stages, value.as_object_mut()) {
        obj.insert("stages".into(), json!(j));
    }
    Config::from_json(&value.to_string()).map_err(usage)
}

fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(usage)?;
    Manifest::from_json(&text).map_err(usage)
}

fn stage_summary(r: &StageRecord) -> serde_json::Value {
    let failed: Vec<&str> = r.verdicts.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    json!({
        "j": r.j,
        "eps": r.eps,
        "degree": r.degree,
        "checks": r.verdicts.len(),
        "failed": failed,
        "pass": r.ok(),
    })
}

fn cmd_build(config: Option<&Path>, out: &Path, stages: Option<usize>) -> Result<bool> {
    let cfg = load_config(config, stages)?;
    let st = Setup::new(cfg).map_err(usage)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let built = build_with(&st, &mut |r| {
        eprintln!("stage {}: eps {:e}, degree {}, {}", r.j, r.eps, r.degree, if r.ok() { "ok" } else { "FAILED" });
    });
    let records = match built {
        Ok(r) => r,
        Err(DriverError::Config(m)) => return Err(usage(anyhow!(m))),
        Err(e) => {
            let report = json!({ "pass": false, "error": e.to_string() });
            fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
            bail!(e);
        }
    };
    let m = manifest(&st, records);
    fs::write(out.join("manifest.json"), m.to_json())?;
    let pass = m.stages.iter().all(|s| s.ok()) && m.tail.iter().all(|t| t.pass);
    let report = json!({
        "stages": m.stages.iter().map(stage_summary).collect::<Vec<_>>(),
        "tail": m.tail,
        "pass": pass,
    });
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    eprintln!("wrote {}", out.join("manifest.json").display());
    Ok(pass)
}

fn cmd_verify(path: &Path, report: Option<PathBuf>) -> Result<bool> {
    let m = load_manifest(path)?;
    let r = full_report(&m).map_err(usage)?;
    for s in &r.stages {
        let failed: Vec<&str> = s.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
        eprintln!("stage {}: {} checks, reproduced {}, failed {:?}", s.j, s.checks.len(), s.reproduced, failed);
    }
    eprintln!(
        "schedule: {} steps checked, {} indeterminate, {} mismatches; attractor {}; escape {}; ladder {}",
        r.schedule.checked,
        r.schedule.indeterminate,
        r.schedule.mismatches,
        r.attractor.pass,
        r.escape.iter().all(|e| e.pass),
        r.ladder.as_ref().is_some_and(|l| l.pass),
    );
    let dest = report.unwrap_or_else(|| path.with_file_name("report.json"));
    fs::write(&dest, serde_json::to_string_pretty(&r)?)?;
    eprintln!("{} -> {}", if r.pass { "PASS" } else { "FAIL" }, dest.display());
    Ok(r.pass)
}

fn parse_complex(s: &str) -> Result<C64> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [re, im] => Ok(C64::new(re.parse()?, im.parse()?)),
        _ => bail!("expected re,im, got {s:?}"),
    }
}

fn write_or_print(out: Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(&p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_orbit(path: &Path, seed: Option<String>, steps: Option<u64>, dhat: Option<f64>, out: Option<PathBuf>) -> Result<bool> {
    let m = load_manifest(path)?;
    let v = Verifier::new(&m).map_err(usage)?;
    let big_j = v.big_j();
    let z = match seed {
        Some(s) => parse_complex(&s).map_err(usage)?,
        None => v.setup.seed.k_j(big_j).centroid(),
    };
    let steps = steps.unwrap_or_else(|| v.setup.schedule.cumulative_n(big_j + 1).expect("validated schedule"));
    let mut lab = v.labeler.clone();
    if let Some(r) = dhat {
        lab = lab.with_dhat(Region::disk(C64::new(0.0, 0.0), r));
    }
    let log = iterate(v.f(), z, steps, &lab);
    write_or_print(out, &log.to_csv())?;
    Ok(log.steps.iter().all(|s| s.matched != Some(false)))
}

/// `1, 2, 5, 10, 20, 50, ...` below `k`, then `k`.
fn checkpoints(k: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut decade = 1u64;
    'outer: loop {
        for d in [1, 2, 5] {
            let x = d * decade;
            if x >= k {
                break 'outer;
            }
            out.push(x);
        }
        decade *= 10;
    }
    out.push(k);
    out
}

fn frac(q: Ratio<u64>) -> String {
    format!("{}/{}", q.numer(), q.denom())
}

fn cmd_density(lambda: &str, k: u64, shift: u64, m_offset: u64, multi: Option<String>, out: Option<PathBuf>) -> Result<bool> {
    if k == 0 {
        return Err(usage(anyhow!("k must be at least 1")));
    }
    let mut csv = String::new();
    match multi {
        Some(list) => {
            let lambdas = list.split(',').map(|s| parse_ratio(s.trim())).collect::<Result<Vec<_>, _>>().map_err(usage)?;
            let s = MultiCenterSchedule::new(&lambdas).map_err(usage)?;
            csv.push_str("center,k,count,density_num,density_den,lower,upper\n");
            for l in 1..=s.centers() {
                for x in checkpoints(k) {
                    let count = s.count(l, x)?;
                    let (lo, hi) = s.density_bounds(l, x)?;
                    csv.push_str(&format!("{l},{x},{count},{count},{x},{},{}\n", frac(lo), frac(hi)));
                }
            }
        }
        None => {
            let base = lambda_schedule(parse_ratio(lambda).map_err(usage)?, m_offset).map_err(usage)?;
            let s = shifted_schedule(&base, shift);
            csv.push_str("k,count,density_num,density_den,lower,upper\n");
            for x in checkpoints(k) {
                let count = s.count(x)?;
                let (lo, hi) = s.density_bounds(x)?;
                csv.push_str(&format!("{x},{count},{count},{x},{},{}\n", frac(lo), frac(hi)));
            }
        }
    }
    write_or_print(out, &csv)?;
    Ok(true)
}

fn cmd_render(path: &Path, out: &Path, width: usize, height: usize, iterations: Option<usize>, viewport: &str) -> Result<bool> {
    let m = load_manifest(path)?;
    let v = Verifier::new(&m).map_err(usage)?;
    let nums = viewport.split(',').map(|s| s.trim().parse::<f64>()).collect::<Result<Vec<_>, _>>().map_err(usage)?;
    let [x0, y0, x1, y1] = nums[..] else { return Err(usage(anyhow!("viewport needs x0,y0,x1,y1"))) };
    if !(x1 > x0 && y1 > y0) || width == 0 || height == 0 {
        return Err(usage(anyhow!("empty viewport or image")));
    }
    let big_j = v.big_j();
    let iterations =
        iterations.unwrap_or_else(|| v.setup.schedule.cumulative_n(big_j + 1).expect("validated schedule") as usize);
    let img = render(v.f(), &v.labeler, (C64::new(x0, y0), C64::new(x1, y1)), width, height, iterations);
    fs::write(out, img.to_ppm()).with_context(|| format!("writing {}", out.display()))?;
    Ok(true)
}
