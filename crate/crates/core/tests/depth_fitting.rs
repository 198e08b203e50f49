use std::time::Instant;
use vr3dense_core::depth_losses::{fit_depth_toy, DepthLossWeights, EdgeParams, DEFAULT_FIT_LR, DEFAULT_FIT_STEPS};
use vr3dense_core::synthetic::{default_scene, median_abs_rel, rmse};

#[test]
fn fit_halves_error_with_monotone_trace() {
    let scene = default_scene::<f64>();
    let init = scene.depth_left.map(|d| d * 1.5);
    let start = Instant::now();
    let fit = fit_depth_toy(
        &scene.pair,
        &init,
        &DepthLossWeights::toy_fit(),
        &EdgeParams::zero(),
        DEFAULT_FIT_STEPS,
        DEFAULT_FIT_LR,
    )
    .unwrap();
    let elapsed = start.elapsed();
    let before = median_abs_rel(&init, &scene.depth_left);
    let after = median_abs_rel(&fit.depth_left, &scene.depth_left);
    assert!(after <= 0.5 * before, "{before} -> {after}");
    assert!(fit.trace[10..].windows(2).all(|p| p[1] <= p[0]));
    assert!(elapsed.as_secs_f64() < 30.0, "{elapsed:?}");
}

#[test]
fn edge_preserving_smoothness_beats_plain_smoothness() {
    let scene = default_scene::<f64>();
    let init = scene.depth_left.map(|d| d * 1.5);
    let run = |beta: f64| {
        let w = DepthLossWeights {
            beta_edge: beta,
            ..DepthLossWeights::toy_fit()
        };
        let fit = fit_depth_toy(&scene.pair, &init, &w, &EdgeParams::zero(), DEFAULT_FIT_STEPS, DEFAULT_FIT_LR).unwrap();
        rmse(&fit.depth_left, &scene.depth_left)
    };
    let (eps, smooth) = (run(0.5), run(0.0));
    assert!(eps < smooth, "eps {eps} smooth {smooth}");
}
