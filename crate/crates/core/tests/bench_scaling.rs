use motionforge::bench::{run_bench, synthetic_clip, Method, MIN_FRAMES, MIN_REPEATS};

fn fps(method: Method, side: usize) -> f64 {
    let clip = synthetic_clip(side, side, MIN_FRAMES + 1).unwrap();
    run_bench(&[method], &clip, MIN_REPEATS).unwrap()[0].fps_median
}

#[test]
fn fewer_pixels_never_run_slower() {
    // four times fewer pixels; 5% allowance for scheduler jitter
    let cases = [(Method::Me, 224), (Method::Rgbdiff, 224), (Method::HornSchunck, 112)];
    for (method, big) in cases {
        let (small_fps, big_fps) = (fps(method, big / 2), fps(method, big));
        assert!(
            small_fps >= 0.95 * big_fps,
            "{}: {small_fps:.1} fps at {} vs {big_fps:.1} at {big}",
            method.name(),
            big / 2
        );
    }
}
