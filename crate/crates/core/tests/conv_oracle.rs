mod common;

#[test]
fn conv_matches_direct_loops_on_all_small_shapes() {
    let sweep = common::conv_sweep();
    assert_eq!(sweep.shapes + sweep.rejected, 4 * 4 * 4 * 9 * 9 * 8);
    assert!(
        sweep.max_delta <= 1e-5,
        "max |delta| {:.3e} at {}",
        sweep.max_delta,
        sweep.worst
    );
}
