//! Instance augmentation: the 8 dihedral symmetries of the unit square.

use crate::vrp::Instance;

/// Coordinate transforms of the dihedral group of the unit square, identity
/// first. All are isometries, so tour costs are preserved.
pub const SYMMETRY_TRANSFORMS: [fn(f64, f64) -> (f64, f64); 8] = [
    |x, y| (x, y),
    |x, y| (y, x),
    |x, y| (x, 1.0 - y),
    |x, y| (1.0 - x, y),
    |x, y| (1.0 - x, 1.0 - y),
    |x, y| (y, 1.0 - x),
    |x, y| (1.0 - y, x),
    |x, y| (1.0 - y, 1.0 - x),
];

/// The 8 symmetric variants of an instance (identity included). Node order
/// and every non-coordinate attribute are unchanged, so a tour found on any
/// variant evaluates directly on the original.
pub fn augment_instance(instance: &Instance) -> Vec<Instance> {
    SYMMETRY_TRANSFORMS
        .iter()
        .map(|f| {
            let mut inst = instance.clone();
            for c in inst.coords.iter_mut() {
                let (x, y) = f(c[0], c[1]);
                *c = [x, y];
            }
            inst
        })
        .collect()
}
