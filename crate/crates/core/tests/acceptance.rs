//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Criterion 6 trains the toy study and takes several minutes.

mod common;

use std::f64::consts::LN_2;
use std::time::Instant;

use common::{
    ce_oracle, mae_oracle, mse_oracle, psnr_oracle, random_image, rel_err, rng, ssim_oracle, structured_image,
    tiny_config, tiny_data, tiny_run_config,
};
use dccycle::autograd::{Graph, Shape, Tensor};
use dccycle::data::{normalize_pixels, Direction, Domain, TrainingBatch, UnpairedDataset};
use dccycle::experiments::{
    fonts_available, rebuild_tables, run_plan, sweep_plots, ExperimentPlan, PlanKind, Preset, RunConfig,
};
use dccycle::losses::{
    ce_patch_loss, cycle_loss_mae, cycle_loss_ssim, cycle_ssim_var, dc_loss, discriminator_loss,
    discriminator_terms, ConstantScorer, GeneratorPass, Label, LossConfig, LossFamily,
};
use dccycle::metrics::{error_map, mae, psnr, psnr_from_mse, ssim, ssim_components, SsimParams};
use dccycle::model::{
    build_discriminator, build_generator, forward_cycle, DiscriminatorSpec, GeneratorSpec, OutputActivation,
    PatchGrid, NORM_EPS,
};
use dccycle::trainer::{evaluate, fit, FitOptions, LogRow, TrainConfig, TrainState};
use dccycle::{Image, ValueRange};
use rand::Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn grid(values: Vec<f64>) -> PatchGrid {
    let n = values.len();
    PatchGrid::new(1, n, values, OutputActivation::Sigmoid).unwrap()
}

fn constant(v: f64, activation: OutputActivation) -> ConstantScorer {
    ConstantScorer(PatchGrid::new(2, 2, vec![v; 4], activation).unwrap())
}

fn oracle_suite() -> Outcome {
    let mut r = rng(1001);
    let tol = 1e-9;
    let mut worst = [0.0f64; 6];
    let disc = ok(build_discriminator::<f64>(
        DiscriminatorSpec::new(16, 4, 2, OutputActivation::Sigmoid),
        5,
    ))?;
    for _ in 0..100 {
        let n = r.random_range(1..50);
        let values: Vec<f64> = (0..n).map(|_| r.random_range(0.0..=1.0)).collect();
        let label = if r.random_bool(0.5) { Label::Real } else { Label::Fake };
        let target = if label == Label::Real { 1.0 } else { 0.0 };
        let got = ok(ce_patch_loss(&grid(values.clone()), label))?;
        worst[0] = worst[0].max((got - ce_oracle(&values, target)).abs());

        let k = r.random_range(1..4);
        let negs: Vec<Image> = (0..k).map(|_| random_image(&mut r, 16, ValueRange::Model)).collect();
        let mut expect = 0.0;
        for im in &negs {
            expect += ce_oracle(ok(disc.score(im))?.values(), 0.0);
        }
        expect /= k as f64;
        let got = ok(dc_loss(&disc, &negs, LossFamily::SsimCe))?;
        worst[1] = worst[1].max((got - expect).abs());

        let size = 4 * r.random_range(1..5);
        let im = |r: &mut _| random_image(r, size, ValueRange::Model);
        let (x, xr, y, yr) = (im(&mut r), im(&mut r), im(&mut r), im(&mut r));
        let got = ok(cycle_loss_mae(&x, &xr, &y, &yr))?;
        worst[2] = worst[2].max((got - (mae_oracle(&x, &xr) + mae_oracle(&y, &yr))).abs());

        let a = random_image(&mut r, 16, ValueRange::Metric);
        let b = random_image(&mut r, 16, ValueRange::Metric);
        worst[3] = worst[3].max((ok(mae(&a, &b))? - mae_oracle(&a, &b)).abs());
        worst[4] = worst[4].max((ok(psnr(&a, &b, 1.0))? - psnr_oracle(&a, &b, 1.0)).abs());
        let p = SsimParams::default();
        worst[5] = worst[5].max((ok(ssim(&a, &b, &p))? - ssim_oracle(&a, &b, &p)).abs());
    }
    let names = ["ce_patch_loss", "dc_loss", "cycle_loss_mae", "mae", "psnr", "ssim"];
    for (name, w) in names.iter().zip(worst) {
        ensure!(w <= tol, "{name} off by {w:e}");
    }
    Ok(format!("max abs error {:.1e} over 6 x 100 cases", worst.iter().cloned().fold(0.0, f64::max)))
}

fn analytic_fixed_points() -> Outcome {
    let near = |a: f64, b: f64, tol: f64| (a - b).abs() <= tol;
    let sig = OutputActivation::Sigmoid;
    let lin = OutputActivation::Linear;
    let mut checked = 0;
    let mut check = |name: &str, cond: bool| -> Result<(), String> {
        checked += 1;
        if cond {
            Ok(())
        } else {
            Err(name.to_string())
        }
    };
    let a = structured_image(16, 0.4);
    let p = SsimParams::default();
    check("ssim(a, a) = 1", near(ok(ssim(&a, &a, &p))?, 1.0, 1e-12))?;
    for label in [Label::Real, Label::Fake] {
        check("all-0.5 grid CE = ln 2", near(ok(ce_patch_loss(&grid(vec![0.5; 16]), label))?, LN_2, 1e-12))?;
    }
    check(
        "perfect grid CE <= -ln(1 - eps)",
        ok(ce_patch_loss(&grid(vec![1.0; 16]), Label::Real))? <= -(1.0f64 - 1e-7).ln() + 1e-15,
    )?;
    let im = Image::filled(16, 16, 0.0, ValueRange::Model).unwrap();
    let negs = [im.clone()];
    check(
        "dc_loss at 0, ssim_ce ~ 0",
        ok(dc_loss(&constant(0.0, sig), &negs, LossFamily::SsimCe))? < 1e-6,
    )?;
    check(
        "dc_loss at 0.5, ssim_ce = ln 2",
        near(ok(dc_loss(&constant(0.5, sig), &negs, LossFamily::SsimCe))?, LN_2, 1e-12),
    )?;
    check(
        "dc_loss at 0.8, mae_mse = 0.64",
        near(ok(dc_loss(&constant(0.8, lin), &negs, LossFamily::MaeMse))?, 0.64, 1e-12),
    )?;
    let cfg = LossConfig::new(LossFamily::SsimCe, true);
    let composed = ok(discriminator_loss(&constant(0.5, sig), &im, &im, Some(&negs), &cfg))?;
    check("beta composition 2.5 ln 2 = 1.732868", near(composed, 1.732868, 1e-6))?;
    let off = LossConfig::new(LossFamily::SsimCe, false);
    check(
        "disc all 0.5, dc off = 2 ln 2",
        near(ok(discriminator_loss(&constant(0.5, sig), &im, &im, None, &off))?, 2.0 * LN_2, 1e-12),
    )?;
    let fake = Image::filled(16, 16, 0.3, ValueRange::Model).unwrap();
    let offset = Image::filled(16, 16, 0.4, ValueRange::Model).unwrap();
    check("cycle mae identity = 0", ok(cycle_loss_mae(&im, &im, &fake, &fake))? == 0.0)?;
    check(
        "cycle mae offset 0.1 = 0.1",
        near(ok(cycle_loss_mae(&fake, &offset, &im, &im))?, 0.1, 1e-12),
    )?;
    check("cycle ssim perfect = 0", ok(cycle_loss_ssim(&a, &a, &a, &a, &p))?.abs() < 1e-12)?;
    let ones = Image::filled(4, 4, 1.0, ValueRange::Metric).unwrap();
    let zeros = Image::filled(4, 4, 0.0, ValueRange::Metric).unwrap();
    check("mae identical = 0", ok(mae(&a, &a))? == 0.0)?;
    check("mae ones vs zeros = 1", ok(mae(&ones, &zeros))? == 1.0)?;
    check("psnr(mse 0.01, L 1) = 20 dB", near(psnr_from_mse(0.01, 1.0), 20.0, 1e-12))?;
    check("psnr identical = inf", ok(psnr(&a, &a, 1.0))? == f64::INFINITY)?;
    let comp = ok(ssim_components(&a, &a, &p))?;
    check(
        "identical: l = c = s = 1",
        [&comp.luminance, &comp.contrast, &comp.structure]
            .iter()
            .all(|m| m.iter().all(|&v| near(v, 1.0, 1e-12))),
    )?;
    let c1 = Image::filled(16, 16, 0.2, ValueRange::Metric).unwrap();
    let c2 = Image::filled(16, 16, 0.7, ValueRange::Metric).unwrap();
    let comp = ok(ssim_components(&c1, &c2, &p))?;
    let lum = (2.0 * 0.2 * 0.7 + p.c1()) / (0.04 + 0.49 + p.c1());
    check(
        "constant vs constant: c = s = 1, l analytic",
        comp.contrast.iter().chain(&comp.structure).all(|&v| near(v, 1.0, 1e-12))
            && comp.luminance.iter().all(|&v| near(v, lum, 1e-12)),
    )?;
    check("error map identical = 0", ok(error_map(&a, &a))?.data().iter().all(|&v| v == 0.0))?;
    let inv = ok(Image::new(16, 16, a.data().iter().map(|v| 1.0 - v).collect(), ValueRange::Metric))?;
    let em = ok(error_map(&a, &inv))?;
    check(
        "error map of 1 - real = |2 real - 1|",
        em.data().iter().zip(a.data()).all(|(e, r)| near(*e, (2.0 * r - 1.0).abs(), 1e-12)),
    )?;
    let v = normalize_pixels(&[0, 255, 128], 255);
    check("pixel 0 -> -1", v[0] == -1.0)?;
    check("pixel 255 -> 1", v[1] == 1.0)?;
    check("pixel 128 -> 0.003921", near(v[2], 0.003921, 1e-6))?;
    let spec = GeneratorSpec::new(64, 16, 3, 2);
    let g = ok(build_generator::<f32>(spec, 0))?;
    let out = ok(g.translate(&Image::filled(64, 64, 0.0, ValueRange::Model).unwrap()))?;
    check(
        "spec(64, 16, 3, 2) zero image -> 64x64 in [-1, 1]",
        out.height() == 64 && out.width() == 64 && out.data().iter().all(|v| (-1.0..=1.0).contains(v)),
    )?;
    Ok(format!("{checked} fixed points"))
}

/// Parameter `i` counts G's tensors first, then F's.
fn gen_param(s: &mut TrainState<f64>, n_g: usize, i: usize, j: usize) -> &mut f64 {
    let (net, idx) = if i < n_g {
        (s.gen_g.network_mut(), i)
    } else {
        (s.gen_f.network_mut(), i - n_g)
    };
    &mut net.params_mut()[idx].value.data_mut()[j]
}

fn gradient_checks() -> Outcome {
    let h = 1e-6;
    let p = SsimParams::default();
    let mut r = rng(1003);
    let x = structured_image(16, 0.2).to_model().to_tensor::<f64>();
    let y = structured_image(16, 0.9).to_model().to_tensor::<f64>();
    let mut rec = [
        random_image(&mut r, 16, ValueRange::Model).to_tensor::<f64>(),
        random_image(&mut r, 16, ValueRange::Model).to_tensor::<f64>(),
    ];
    let eval = |rec: &[Tensor<f64>; 2], grads: bool| -> Result<(f64, Vec<Vec<f64>>), String> {
        let mut g = Graph::<f64>::new();
        let (xv, yv) = (g.constant(x.clone()), g.constant(y.clone()));
        let (xr, yr) = (g.leaf(rec[0].clone(), true), g.leaf(rec[1].clone(), true));
        let l = ok(cycle_ssim_var(&mut g, xv, xr, yv, yr, &p))?;
        let value = g.value(l).item();
        if !grads {
            return Ok((value, vec![]));
        }
        ok(g.backward(l))?;
        Ok((value, vec![g.grad(xr).unwrap().data().to_vec(), g.grad(yr).unwrap().data().to_vec()]))
    };
    let (_, grads) = eval(&rec, true)?;
    let mut worst_ssim = 0.0f64;
    let mut coords = 0;
    for k in 0..128 {
        let (which, idx) = (k % 2, (k * 37) % 256);
        let orig = rec[which].data()[idx];
        rec[which].data_mut()[idx] = orig + h;
        let up = eval(&rec, false)?.0;
        rec[which].data_mut()[idx] = orig - h;
        let down = eval(&rec, false)?.0;
        rec[which].data_mut()[idx] = orig;
        worst_ssim = worst_ssim.max(rel_err(grads[which][idx], (up - down) / (2.0 * h)));
        coords += 1;
    }
    ensure!(worst_ssim < 1e-3, "ssim cycle loss relative error {worst_ssim:e}");

    let data = tiny_data(6, 16);
    let split = ok(data.split(0, 0.5))?;
    let mut state = ok(TrainState::<f64>::new(&tiny_config(16, LossFamily::SsimCe, true, 8)))?;
    let batch = ok(data.train_view(&split).next_batch(state.rng(), 1))?;
    for net in [state.gen_g.network_mut(), state.gen_f.network_mut()] {
        for p in net.params_mut() {
            for v in p.value.data_mut() {
                *v = r.random_range(-0.3..0.3);
            }
        }
    }
    let cfg = state.config().loss;
    let (bx, by) = (batch.x[0].image.to_tensor::<f64>(), batch.y[0].image.to_tensor::<f64>());
    let total = |s: &TrainState<f64>| -> Result<f64, String> {
        let gp = ok(GeneratorPass::build(&s.gen_g, &s.gen_f, &s.disc_x, &s.disc_y, &bx, &by, &cfg))?;
        Ok(gp.value(gp.total))
    };
    let mut gp = ok(GeneratorPass::build(&state.gen_g, &state.gen_f, &state.disc_x, &state.disc_y, &bx, &by, &cfg))?;
    ok(gp.graph.backward(gp.total))?;
    let grads: Vec<Vec<f64>> = gp
        .params_g
        .iter()
        .chain(&gp.params_f)
        .map(|&v| gp.graph.grad(v).unwrap().data().to_vec())
        .collect();
    let n_g = gp.params_g.len();
    let all: Vec<(usize, usize)> = grads
        .iter()
        .enumerate()
        .flat_map(|(i, g)| (0..g.len()).map(move |j| (i, j)))
        .collect();
    let mut worst_total = 0.0f64;
    for k in 0..100 {
        let (i, j) = all[(k * 104_729) % all.len()];
        let orig = *gen_param(&mut state, n_g, i, j);
        *gen_param(&mut state, n_g, i, j) = orig + h;
        let up = total(&state)?;
        *gen_param(&mut state, n_g, i, j) = orig - h;
        let down = total(&state)?;
        *gen_param(&mut state, n_g, i, j) = orig;
        worst_total = worst_total.max(rel_err(grads[i][j], (up - down) / (2.0 * h)));
        coords += 1;
    }
    ensure!(worst_total < 1e-3, "total generator loss relative error {worst_total:e}");
    Ok(format!(
        "{coords} coordinates, worst relative error ssim {worst_ssim:.1e}, total {worst_total:.1e}"
    ))
}

fn architecture_contract() -> Outcome {
    let mut r = rng(1004);
    let x = random_image(&mut r, 256, ValueRange::Model);
    let d = ok(build_discriminator::<f32>(DiscriminatorSpec::full_scale(), 0))?;
    let grid = ok(d.score(&x))?;
    ensure!(
        grid.rows() == 16 && grid.cols() == 16 && grid.len() == 256,
        "grid {}x{}",
        grid.rows(),
        grid.cols()
    );
    ensure!(grid.values().iter().all(|&v| v > 0.0 && v < 1.0), "sigmoid grid outside (0, 1)");
    let g = ok(build_generator::<f32>(GeneratorSpec::full_scale(), 0))?;
    let y = ok(g.translate(&x))?;
    ensure!(y.height() == 256 && y.width() == 256, "generator output {}x{}", y.height(), y.width());
    let small = ok(build_discriminator::<f64>(DiscriminatorSpec::toy(), 0))?;
    let g64 = ok(small.score(&random_image(&mut r, 64, ValueRange::Model)))?;
    ensure!(g64.rows() == 4, "64px grid {}", g64.rows());
    let gen = ok(build_generator::<f64>(GeneratorSpec::new(32, 4, 1, 2), 1))?;
    let x32 = random_image(&mut r, 32, ValueRange::Model);
    let (yh, xr) = ok(forward_cycle(&gen, &gen, &x32))?;
    ensure!(yh.same_shape(&x32) && xr.same_shape(&x32), "cycle changed shape");

    let shape = Shape::new(2, 8, 32, 32);
    let data = (0..shape.numel()).map(|_| r.random_range(-4.0..6.0)).collect();
    let mut gr = Graph::<f64>::new();
    let v = gr.constant(ok(Tensor::from_vec(shape, data))?);
    let n = gr.instance_norm(v, NORM_EPS);
    let (mut worst_mean, mut worst_var) = (0.0f64, 0.0f64);
    for plane in gr.value(n).data().chunks(32 * 32) {
        let m = plane.iter().sum::<f64>() / plane.len() as f64;
        let var = plane.iter().map(|v| (v - m).powi(2)).sum::<f64>() / plane.len() as f64;
        worst_mean = worst_mean.max(m.abs());
        worst_var = worst_var.max((var - 1.0).abs());
    }
    ensure!(worst_mean < 1e-5 && worst_var < 1e-4, "instance norm mean {worst_mean:e} var {worst_var:e}");
    Ok(format!("256 -> 16x16 grid, shapes kept, norm |mean| {worst_mean:.0e} |var-1| {worst_var:.0e}"))
}

fn training_mechanics() -> Outcome {
    let data = tiny_data(10, 16);
    let split = ok(data.split(0, 0.8))?;
    let view = data.train_view(&split);
    let cfg = tiny_config(16, LossFamily::SsimCe, true, 0);
    let mut s = ok(TrainState::<f64>::new(&cfg))?;
    let mut r = rng(1005);
    for step in 1..=1000u64 {
        let batch = ok(view.next_batch(&mut r, 1))?;
        ok(s.train_step(&batch))?;
        ensure!(s.ratio_invariant_holds(), "ratio broken at step {step}");
    }
    ensure!(
        s.generator_updates() == 1000 && s.discriminator_updates() == 200,
        "counters {} / {}",
        s.generator_updates(),
        s.discriminator_updates()
    );

    for seed in 0..4 {
        let family = if seed % 2 == 0 { LossFamily::SsimCe } else { LossFamily::MaeMse };
        let state = ok(TrainState::<f64>::new(&tiny_config(16, family, true, seed)))?;
        let batch: TrainingBatch = ok(view.next_batch(&mut r, 1))?;
        let mut g = Graph::<f64>::new();
        let bg = state.gen_g.bind(&mut g, true);
        let bd = state.disc_y.bind(&mut g, true);
        let x = g.constant(batch.x[0].image.to_tensor());
        let y = g.constant(batch.y[0].image.to_tensor());
        let neg = g.constant(batch.x_neg[0].image.to_tensor());
        let fake = ok(bg.apply(&mut g, x))?;
        let fake = g.detach(fake);
        let terms = ok(discriminator_terms(&mut g, &bd, y, fake, Some(neg), &state.config().loss))?;
        let (pg, pd) = (bg.params().to_vec(), bd.params().to_vec());
        ok(g.backward(terms.dc.unwrap()))?;
        let gen_norm: f64 = pg.iter().filter_map(|&p| g.grad(p)).flat_map(|t| t.data().iter().map(|v| v * v)).sum();
        let disc_norm: f64 = pd.iter().filter_map(|&p| g.grad(p)).flat_map(|t| t.data().iter().map(|v| v * v)).sum();
        ensure!(gen_norm == 0.0, "DC term reaches the generator (seed {seed})");
        ensure!(disc_norm > 0.0, "DC term gives no discriminator gradient (seed {seed})");
    }

    let replay = || -> Result<Vec<dccycle::losses::LossBreakdown>, String> {
        let mut s = ok(TrainState::<f64>::new(&tiny_config(16, LossFamily::SsimCe, true, 3)))?;
        let mut r = rng(77);
        (0..20)
            .map(|_| {
                let b = ok(view.next_batch(&mut r, 1))?;
                ok(s.train_step(&b))
            })
            .collect()
    };
    ensure!(replay()? == replay()?, "same-seed runs diverged");
    Ok("1000-step ratio holds (200 D updates), DC gradients isolated, 20-step replay identical".into())
}

fn mean_ssim<T: dccycle::autograd::Real>(
    state: &TrainState<T>,
    data: &UnpairedDataset,
    split: &dccycle::data::Split,
    p: &SsimParams,
) -> Result<f64, String> {
    let mut total = 0.0;
    for d in Direction::BOTH {
        total += ok(ok(evaluate(state, data, split, d, p))?.summary())?.ssim.mean;
    }
    Ok(total / 2.0)
}

fn cycle_ssim<T: dccycle::autograd::Real>(
    state: &TrainState<T>,
    data: &UnpairedDataset,
    split: &dccycle::data::Split,
    p: &SsimParams,
) -> Result<f64, String> {
    let mut total = 0.0;
    let mut n = 0;
    for &i in split.test(Domain::X) {
        let x = &data.pool(Domain::X)[i].image;
        let (_, xr) = ok(forward_cycle(&state.gen_g, &state.gen_f, x))?;
        total += ok(ssim(&xr.to_metric(), &x.to_metric(), p))?;
        n += 1;
    }
    Ok(total / n as f64)
}

fn toy_study() -> Outcome {
    let base = RunConfig::preset(Preset::Toy);
    let data = ok(base.load_dataset())?;
    let p = base.train.loss.ssim;
    let mut gains = Vec::new();
    let mut detail = Vec::new();
    for seed in [0u64, 1, 2] {
        let cfg = TrainConfig { seed, ..base.train };
        let split = ok(data.split(seed, base.train_fraction))?;
        let untrained = mean_ssim(&ok(TrainState::<f32>::new(&cfg))?, &data, &split, &p)?;
        let t = Instant::now();
        let out = ok(fit::<f32>(&data, &split, &cfg, &FitOptions::default()))?;
        let trained = mean_ssim(&out.state, &data, &split, &p)?;
        let cyc = cycle_ssim(&out.state, &data, &split, &p)?;
        eprintln!(
            "  seed {seed}: ssim {untrained:.3} -> {trained:.3}, cycle ssim {cyc:.3} ({:.0}s)",
            t.elapsed().as_secs_f64()
        );
        gains.push((untrained, trained));
        detail.push(format!("seed {seed} {untrained:.3}->{trained:.3}"));
    }
    let before = gains.iter().map(|g| g.0).sum::<f64>() / 3.0;
    let after = gains.iter().map(|g| g.1).sum::<f64>() / 3.0;
    ensure!(
        after - before >= 0.25,
        "mean test ssim {after:.3} vs untrained {before:.3}; gain {:.3} < 0.25",
        after - before
    );

    let stream = |loss: LossConfig| -> Result<Vec<LogRow>, String> {
        let cfg = TrainConfig { seed: 0, loss, ..base.train };
        let split = ok(data.split(0, base.train_fraction))?;
        Ok(ok(fit::<f32>(&data, &split, &cfg, &FitOptions::default()))?.log)
    };
    let t = Instant::now();
    let beta_zero = stream(LossConfig { beta: 0.0, ..base.train.loss })?;
    let dc_off = stream(LossConfig {
        dual_contrast: false,
        ..base.train.loss
    })?;
    eprintln!("  beta=0 vs dc off streams ({:.0}s)", t.elapsed().as_secs_f64());
    ensure!(beta_zero.len() == dc_off.len(), "stream lengths differ");
    if let Some(k) = beta_zero.iter().zip(&dc_off).position(|(a, b)| a != b) {
        return Err(format!("beta=0 and dc-off streams differ at step {}", k + 1));
    }
    Ok(format!(
        "mean ssim {before:.3} -> {after:.3} (gain {:.3}; {}); beta=0 == dc off over {} steps",
        after - before,
        detail.join(", "),
        beta_zero.len()
    ))
}

fn plumbing() -> Outcome {
    let dir = ok(tempfile::tempdir())?;
    let cfg = tiny_run_config(dir.path(), &[]);
    let data = ok(cfg.load_dataset())?;
    let plan = ExperimentPlan::ablation(&cfg);
    ensure!(
        plan.cells.len() == 4 && plan.seeds.len() == 2 && plan.direction_runs() == 16,
        "plan has {} cells x {} seeds",
        plan.cells.len(),
        plan.seeds.len()
    );
    let outcome = ok(run_plan(&plan, &data, false))?;
    ensure!(outcome.failures() == 0, "{} runs failed", outcome.failures());
    let root = plan.root();
    let rebuilt = ok(rebuild_tables(&root, PlanKind::Ablation))?;
    let mut worst = 0.0f64;
    for (d, table) in Direction::BOTH.into_iter().zip(&rebuilt) {
        let live = ok(outcome.table(d))?;
        ensure!(table.rows.len() == 4, "{d} table has {} rows", table.rows.len());
        for (a, b) in table.rows.iter().zip(&live.rows) {
            for (x, y) in [(a.mae, b.mae), (a.psnr, b.psnr), (a.ssim, b.ssim)] {
                let (x, y) = (x.ok_or("empty cell")?, y.ok_or("empty cell")?);
                worst = worst.max((x.mean - y.mean).abs()).max((x.std - y.std).abs());
            }
        }
        let md = ok(std::fs::read_to_string(root.join(format!("table_{d}.md"))))?;
        let body: Vec<&str> = md.lines().filter(|l| l.starts_with("| ") && !l.starts_with("| |")).collect();
        ensure!(body.len() == 4, "{d} markdown has {} rows", body.len());
        ensure!(
            body.iter().all(|l| l.matches(" (").count() == 3),
            "{d} markdown cells are not `mean (std)`"
        );
    }
    ensure!(worst <= 1e-12, "tables differ from per-run CSVs by {worst:e}");

    let sweep_dir = ok(tempfile::tempdir())?;
    let cfg = tiny_run_config(sweep_dir.path(), &["beta_grid=[0.1, 0.5, 1.0]"]);
    let plan = ok(ExperimentPlan::beta_sweep(&cfg))?;
    let outcome = ok(run_plan(&plan, &data, false))?;
    ensure!(outcome.failures() == 0, "{} sweep runs failed", outcome.failures());
    for d in Direction::BOTH {
        let csv = ok(std::fs::read_to_string(plan.root().join(format!("sweep_{d}.csv"))))?;
        ensure!(csv.lines().count() == 4, "sweep_{d}.csv has {} lines", csv.lines().count());
    }
    let replot = ok(tempfile::tempdir())?;
    let plots = ok(sweep_plots(
        &ok(outcome.table(Direction::A2b))?,
        &ok(outcome.table(Direction::B2a))?,
        replot.path(),
    ))?;
    ensure!(plots.len() == 3, "{} plots", plots.len());
    for plot in &plots {
        let names: Vec<&str> = plot.series.iter().map(|s| s.0.as_str()).collect();
        ensure!(names == ["a2b", "b2a"], "{} series {names:?}", plot.metric);
        ensure!(plot.series.iter().all(|s| s.1.len() == 3), "{} is missing points", plot.metric);
        let on_disk = plan.root().join(plot.path.file_name().unwrap());
        ensure!(on_disk.is_file(), "{} missing", on_disk.display());
    }
    ensure!(fonts_available(), "no font found, plots carry no labels");
    Ok(format!("ablation tables recomputed within {worst:.0e}; sweep csv + 3 labeled plots"))
}

fn metric_sanity() -> Outcome {
    let base = structured_image(32, 0.7);
    let mut r = rng(1008);
    let noise: Vec<f64> = (0..32 * 32).map(|_| r.random_range(-1.0..1.0)).collect();
    let p = SsimParams::default();
    let mut prev: Option<(f64, f64, f64)> = None;
    for k in 1..=20 {
        let t = 0.005 * k as f64;
        let data = base.data().iter().zip(&noise).map(|(v, n)| v + t * n).collect();
        let noisy = ok(Image::new(32, 32, data, ValueRange::Metric))?;
        let m = mse_oracle(&base, &noisy);
        let ps = ok(psnr(&noisy, &base, 1.0))?;
        let ss = ok(ssim(&noisy, &base, &p))?;
        if let Some((pm, pp, pss)) = prev {
            ensure!(m > pm, "mse not increasing at level {k}");
            ensure!(ps < pp, "psnr {ps} not below {pp} at level {k}");
            ensure!(ss <= pss, "ssim {ss} rose above {pss} at level {k}");
        }
        prev = Some((m, ps, ss));
    }
    let (_, last_psnr, last_ssim) = prev.unwrap();
    Ok(format!("20 levels, final psnr {last_psnr:.2} dB, ssim {last_ssim:.3}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("loss oracle suite", oracle_suite),
        ("analytic fixed points", analytic_fixed_points),
        ("gradient checks", gradient_checks),
        ("architecture contract", architecture_contract),
        ("training mechanics", training_mechanics),
        ("toy-data directional study", toy_study),
        ("ablation/sweep plumbing", plumbing),
        ("metric-space sanity", metric_sanity),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let t = Instant::now();
        let result = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {n} {name}: {detail} [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL {n} {name}: {why} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
