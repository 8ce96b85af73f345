use gc_bench::{activation, spatial_conv};
use gc_core::ops::conv3d;

#[test]
fn fixtures_are_seeded() {
    assert_eq!(activation(1, 2, 3, 4, 7), activation(1, 2, 3, 4, 7));
    assert_ne!(activation(1, 2, 3, 4, 7), activation(1, 2, 3, 4, 8));
    assert_eq!(spatial_conv(4, 1).kernel.value.len(), 9 * 16);
}

#[test]
fn spatial_conv_keeps_shape() {
    let x = activation(2, 3, 6, 8, 0);
    let y = conv3d(&x, &spatial_conv(8, 1)).unwrap();
    assert_eq!(y.shape(), x.shape());
}
