use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context};
use num_complex::Complex64;
use serde_json::json;

use twinmz::analysis::{
    build_report, emit_report, figure2_svg, ideal_lines, run_calibration_sweep_with,
    run_pipeline, FramePoint, FrameSet, Report,
};
use twinmz::modular::{
    complete_uncertainty_check, modular_distribution_with_bins, screen_pattern, single_packet,
    translate_expectation, GridSpec, TwoSlitState, Wavepacket1D,
};
use twinmz::pathspace::{
    class_selection, weak_value, ClassId, Mode, PathState, PlaneId, ProjectorObservable,
};
use twinmz::pointerlab::{
    couple, project_onto, validity_check, GaussianPointer, JointState, WeakValueMoments,
};

use crate::config::RunConfig;
use crate::{Figure2Args, ModularCommon, ModularDemo, RunArgs, WeakValueArgs};

pub fn run(args: RunArgs) -> anyhow::Result<ExitCode> {
    let cfg = RunConfig::load(args.config.as_deref())?.resolved(args.seed, args.out);
    let pipeline_cfg = cfg.pipeline_config()?;
    let result = run_pipeline(&pipeline_cfg).context("running the measurement pipeline")?;
    let paths = emit_report(&result, &cfg.echo(), &cfg.output_dir)
        .context("writing the report bundle")?;

    if args.json {
        let report = build_report(&result, &cfg.echo());
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        let [n0, n1, n2] = result.extraction.n_hat;
        println!("calibration slope: {:.5} px/um", result.calibration.slope_px_per_um);
        println!(
            "crossing point: x0 = {:.3} um, y0 = {:.3} px",
            result.frame.x0_um, result.frame.y0_px
        );
        println!("extracted weak values: N0 = {n0:.4}, N1 = {n1:.4}, N2 = {n2:.4}");
        println!(
            "ordering N0 < N2 < N1: {}",
            if result.extraction.ordering_ok { "ok" } else { "VIOLATED" }
        );
        println!("report: {}", paths.report_json.display());
    }
    Ok(if result.checks.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn parse_state(text: &str, plane: PlaneId) -> anyhow::Result<PathState> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .context("state override must be four comma-separated numbers: re,im,re,im")?;
    if parts.len() != 4 {
        bail!("state override must have exactly four components, got {}", parts.len());
    }
    Ok(PathState::new(
        plane,
        vec![
            Complex64::new(parts[0], parts[1]),
            Complex64::new(parts[2], parts[3]),
        ],
    )?)
}

pub fn weakvalue(args: WeakValueArgs) -> anyhow::Result<ExitCode> {
    let class = ClassId::from_index(args.class)?;
    let (_, pre_default, post_default) = class_selection(class);
    let pre = match &args.pre {
        Some(text) => parse_state(text, PlaneId::Plane2)?,
        None => pre_default,
    };
    let post = match &args.post {
        Some(text) => parse_state(text, PlaneId::Plane2)?,
        None => post_default,
    };

    let n_hat = ProjectorObservable::new(Mode::L2);
    let value = weak_value(&pre, &post, n_hat, 1)?;

    let pointer = GaussianPointer::new(args.sigma)?;
    let joint = couple(&JointState::product(&pre, &pointer), args.gamma)?;
    let report = project_onto(&joint, &post)?;
    let validity = validity_check(
        args.gamma,
        args.sigma,
        &[WeakValueMoments::projector(value)],
    );

    if args.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&json!({
                "class": args.class,
                "gamma_um": args.gamma,
                "sigma_um": args.sigma,
                "weak_value": {"re": value.re, "im": value.im},
                "centroid_um": report.centroid,
                "probability": report.probability,
                "validity": validity,
            }))?
        );
    } else {
        println!("weak value: {:+.6} {:+.6}i", value.re, value.im);
        println!("pointer centroid: {:.6} um", report.centroid);
        println!("post-selection probability: {:.6}", report.probability);
        println!(
            "weak regime: |gamma| <= {:.1} um (raw bound {:.1} um, margin {}), verdict: {}",
            validity.weak_window,
            validity.raw_bound,
            validity.margin,
            if validity.is_weak { "weak" } else { "NOT weak" }
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn modular_state(common: &ModularCommon) -> anyhow::Result<Wavepacket1D> {
    let grid = GridSpec::for_separation(common.ell)?;
    if common.single_packet {
        Ok(single_packet(&grid, 0.0, common.sigma)?)
    } else {
        Ok(TwoSlitState::new(common.ell, common.sigma, common.alpha, &grid)?
            .packet()
            .clone())
    }
}

fn modular_params(common: &ModularCommon) -> serde_json::Value {
    json!({
        "single_packet": common.single_packet,
        "alpha": common.alpha,
        "ell": common.ell,
        "sigma": common.sigma,
    })
}

pub fn modular(demo: ModularDemo) -> anyhow::Result<ExitCode> {
    match demo {
        ModularDemo::Uncertainty(common) => {
            let state = modular_state(&common)?;
            let report = complete_uncertainty_check(&state, common.ell, common.n_max, common.eps)?;
            if common.json {
                let mut value = serde_json::to_value(&report)?;
                value["params"] = modular_params(&common);
                println!("{}", serde_json::to_string_pretty(&value)?);
            } else {
                println!("is_completely_uncertain: {}", report.is_completely_uncertain);
                println!("max |<T^n>| over n <= {}: {:.3e}", common.n_max, report.max_overlap);
                println!(
                    "max uniformity deviation: {:.3e}",
                    report.max_uniformity_deviation
                );
            }
        }
        ModularDemo::Expectation { common, distance, n } => {
            let state = modular_state(&common)?;
            let distance = distance.unwrap_or(common.ell);
            let value = translate_expectation(&state, distance, n)?;
            if common.json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&json!({
                        "re": value.re,
                        "im": value.im,
                        "abs": value.norm(),
                        "arg": value.arg(),
                        "distance": distance,
                        "n": n,
                        "params": modular_params(&common),
                    }))?
                );
            } else {
                println!(
                    "<T^{n}> = {:+.6} {:+.6}i  (|.| = {:.6}, arg = {:.6} rad)",
                    value.re,
                    value.im,
                    value.norm(),
                    value.arg()
                );
            }
        }
        ModularDemo::Screen { common, time, csv } => {
            let state = modular_state(&common)?;
            let pattern = screen_pattern(&state, time)?;
            let mut params = modular_params(&common);
            params["time"] = json!(time);
            if let Some(path) = csv {
                let mut out = Vec::new();
                pattern.write_csv(&mut out, &params)?;
                std::fs::write(&path, out)
                    .with_context(|| format!("writing {}", path.display()))?;
                if !common.json {
                    println!("wrote {}", path.display());
                }
            }
            if common.json {
                let peak = pattern.density.iter().copied().fold(f64::MIN, f64::max);
                println!(
                    "{}",
                    serde_json::to_string_pretty(&json!({
                        "total_mass": pattern.total_mass(),
                        "peak_density": peak,
                        "samples": pattern.density.len(),
                        "params": params,
                    }))?
                );
            }
        }
        ModularDemo::Distribution { common, bins, csv } => {
            let state = modular_state(&common)?;
            let distribution = modular_distribution_with_bins(&state, common.ell, bins)?;
            let mut params = modular_params(&common);
            params["bins"] = json!(bins);
            if let Some(path) = csv {
                let mut out = Vec::new();
                distribution.write_csv(&mut out, &params)?;
                std::fs::write(&path, out)
                    .with_context(|| format!("writing {}", path.display()))?;
                if !common.json {
                    println!("wrote {}", path.display());
                }
            }
            if common.json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&json!({
                        "uniformity_deviation": distribution.uniformity_deviation(),
                        "max_min_ratio": distribution.max_min_ratio(),
                        "bins": distribution.masses(),
                        "params": params,
                    }))?
                );
            } else {
                println!(
                    "uniformity deviation: {:.3e}, max/min ratio: {:.3}",
                    distribution.uniformity_deviation(),
                    distribution.max_min_ratio()
                );
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

pub fn calibrate(args: RunArgs) -> anyhow::Result<ExitCode> {
    let cfg = RunConfig::load(args.config.as_deref())?.resolved(args.seed, args.out);
    let pipeline_cfg = cfg.pipeline_config()?;
    let set = run_calibration_sweep_with(
        &pipeline_cfg.matrices,
        &pipeline_cfg.stage,
        &pipeline_cfg.pointer,
        &pipeline_cfg.camera,
    )?;
    let fit = twinmz::analysis::fit_calibration(&set, pipeline_cfg.camera.pitch)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&fit)?);
    } else {
        println!("slope: {:.6} px/um", fit.slope_px_per_um);
        println!("gain estimate: {:.4} um beam shift per um of stage travel", fit.gain_estimate);
        println!("fit residual: {:.4} px rms", fit.residual_rms_px);
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_frame_csv(path: &Path) -> anyhow::Result<FrameSet> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != "class_id,x_um,x_prime_um,y_bar_px,displacement_um" {
        bail!("{}: unexpected CSV header {header:?}", path.display());
    }
    let mut class_id = 0u8;
    let mut points = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            bail!("{}:{}: expected 5 fields", path.display(), lineno + 2);
        }
        class_id = fields[0].parse()?;
        let values: Vec<f64> = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<Result<_, _>>()
            .with_context(|| format!("{}:{}", path.display(), lineno + 2))?;
        points.push(FramePoint {
            x_um: values[0],
            x_prime_um: values[1],
            y_bar_px: values[2],
            displacement_um: values[3],
            flagged: !values[2].is_finite(),
        });
    }
    Ok(FrameSet { class_id, points })
}

pub fn figure2(args: Figure2Args) -> anyhow::Result<ExitCode> {
    let report_path = args.dir.join("report.json");
    let report: Report = serde_json::from_str(
        &std::fs::read_to_string(&report_path)
            .with_context(|| format!("reading {}", report_path.display()))?,
    )
    .with_context(|| format!("parsing {}", report_path.display()))?;

    let sets: Vec<FrameSet> = (0..3)
        .map(|k| parse_frame_csv(&args.dir.join(format!("s{k}.csv"))))
        .collect::<anyhow::Result<_>>()?;

    let regime = report.weak_regime;
    let gain = regime.gamma_bound_um / regime.x_prime_bound_um;
    let lines = ideal_lines(gain, report.weak_values_theory);
    let svg = figure2_svg(&sets, &lines, &regime);

    let out = args.out.unwrap_or_else(|| args.dir.join("figure2.svg"));
    std::fs::write(&out, svg).with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {}", out.display());
    Ok(ExitCode::SUCCESS)
}
