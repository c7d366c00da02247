use std::fs;
use std::io::Write;
use std::path::Path;

use eamamba_core::analysis::{cost_report, erf_map, mhss_path_cost, twodss_path_cost};
use eamamba_core::harness::synth::SynthSpec;
use eamamba_core::harness::{
    evaluate, load_checkpoint, load_run_config, read_image, save_checkpoint, synth_dataset, train, write_image,
    RunConfig,
};
use eamamba_core::numerics::grad_check_many;
use eamamba_core::params::{uniform, ParamVars};
use eamamba_core::{build_network, CurveSpec, Error, NetConfig, Result, ScanSet, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::Command;

/// Largest relative error `gradcheck` accepts.
const GRADCHECK_TOL: f64 = 1e-4;

/// Runs one subcommand; `Ok(false)` means it completed but a numeric check failed.
pub fn run(cmd: Command) -> Result<bool> {
    let mut out = std::io::stdout().lock();
    let done: Result<()> = match cmd {
        Command::Train { config, out: dir, log_every } => {
            let cfg = load_run_config(&config)?;
            run_train(&cfg, &dir, log_every, &mut out)
        }
        Command::Infer {
            checkpoint,
            input,
            output,
        } => {
            let net = load_checkpoint(&checkpoint)?;
            let img: Tensor<f32> = read_image(&input)?;
            if img.last_dim() != 3 {
                return Err(Error::Config(format!("{}: expected an RGB (P6) image", input.display())));
            }
            let y = net.infer(&img)?;
            write_image(&output, &y.map(|v| v.clamp(0.0, 1.0)))
        }
        Command::Erf {
            checkpoint,
            data,
            row,
            col,
            out: prefix,
        } => {
            let net = load_checkpoint(&checkpoint)?;
            let spec = SynthSpec {
                kind: Default::default(),
                sigma: data.sigma,
                count: data.count,
                height: data.size,
                width: data.size,
                seed: data.seed,
            };
            let images: Vec<Tensor<f32>> = synth_dataset(&spec)?.into_iter().map(|p| p.degraded).collect();
            let erf = erf_map(&net, &images, (row, col))?;
            fs::write(prefix.with_extension("pgm"), erf.to_pgm()?)?;
            fs::write(prefix.with_extension("csv"), erf.to_csv())?;
            writeln!(out, "diagonal_cone_mass,{:.6}", erf.diagonal_cone_mass(10.0))?;
            Ok(())
        }
        Command::Cost { config, height, width } => {
            let net_cfg = match config {
                Some(p) => load_run_config(p)?.net,
                None => NetConfig::default(),
            };
            let net = build_network::<f32>(&net_cfg, 0)?;
            write!(out, "{}", cost_report(&net, height, width).to_csv())?;
            Ok(())
        }
        Command::Curves { kind, height, width } => {
            let spec: CurveSpec = kind.parse()?;
            write!(out, "{}", spec.build(height, width)?.to_csv())?;
            Ok(())
        }
        Command::Gradcheck { config, seed, coords } => {
            let net_cfg = match config {
                Some(p) => load_run_config(p)?.net,
                None => NetConfig::tiny(),
            };
            let err = gradcheck(&net_cfg, seed, coords)?;
            writeln!(out, "max relative error: {err:e}")?;
            return Ok(err < GRADCHECK_TOL);
        }
        Command::ScanBench {
            channels,
            groups,
            d_state,
            height,
            width,
        } => {
            let all = ScanSet::AllAround.curves();
            writeln!(out, "k,mhss_params,mhss_macs,twodss_params,twodss_macs")?;
            for k in [1, 2, 4, 8] {
                let m = mhss_path_cost(channels, groups, &all[..k], d_state, height, width)?;
                let t = twodss_path_cost(channels, &all[..k], d_state, height, width)?;
                writeln!(out, "{k},{},{},{},{}", m.params, m.macs, t.params, t.macs)?;
            }
            Ok(())
        }
    };
    done.map(|()| true)
}

fn run_train(cfg: &RunConfig, dir: &Path, log_every: usize, out: &mut impl Write) -> Result<()> {
    let mut net = build_network::<f32>(&cfg.net, cfg.init_seed)?;
    let data = synth_dataset(&cfg.data.train_spec())?;
    let val = synth_dataset(&cfg.data.val_spec())?;
    fs::create_dir_all(dir)?;
    let log = train(&mut net, &data, &cfg.train, Some(dir), |r| {
        if log_every > 0 && r.iteration % log_every == 0 {
            let _ = writeln!(out, "iter {} lr {:.3e} loss {:.5}", r.iteration, r.lr, r.loss);
        }
    })?;
    save_checkpoint(dir, &net)?;
    fs::write(dir.join("train_log.csv"), log.to_csv())?;
    let ev = evaluate(&net, &val)?;
    writeln!(
        out,
        "validation psnr {:.3} dB (input {:.3} dB), ssim {:.4} (input {:.4})",
        ev.psnr_output, ev.psnr_input, ev.ssim_output, ev.ssim_input
    )?;
    Ok(())
}

/// Max relative error of `d Σ(y ⊙ w) / d{input, params}` for a random net and image.
pub fn gradcheck(cfg: &NetConfig, seed: u64, coords: usize) -> Result<f64> {
    let net = build_network::<f64>(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let side = cfg.multiple().max(8);
    let image: Tensor<f64> = uniform::<f64, _>(&[side, side, 3], 0.5, &mut rng)?.map(|v| v + 0.5);
    let weights: Tensor<f64> = uniform(&[side, side, 3], 1.0, &mut rng)?;
    let mut inputs = vec![image];
    inputs.extend(net.params.iter().map(|(_, t)| t.clone()));
    let report = grad_check_many(
        |g, v| {
            let pv = ParamVars::from_vars(v[1..].to_vec());
            let y = net.forward(g, &pv, v[0])?;
            let w = g.constant(weights.clone());
            let p = g.mul(y, w)?;
            g.sum(p)
        },
        &inputs,
        1e-5,
        Some(coords.max(1)),
    )?;
    Ok(report.max_rel_error)
}
