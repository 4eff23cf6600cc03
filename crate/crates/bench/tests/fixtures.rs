use vrefine_bench::{compose_inputs, moving_box_mask};

#[test]
fn fixtures_have_matching_latent_grids() {
    let mask = moving_box_mask(5, 48, 72);
    assert!(mask.count() > 0 && mask.count() < mask.data().len());
    let (a, b, pooled) = compose_inputs(5, 48, 72, 8);
    assert_eq!(a.shape(), b.shape());
    let s = a.shape();
    assert_eq!(
        (s.frames, s.height, s.width),
        (pooled.frames(), pooled.height(), pooled.width())
    );
}
