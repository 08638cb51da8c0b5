use nexf_core::phantom::{arch_mask, generate_phantom, PhantomSpec};
use nexf_core::volume::{Dims, Volume};
use proptest::prelude::*;

/// Written by an independent writer (Python `struct.pack("<f")`), x fastest.
const CROSS_WRITER: &[u8] = include_bytes!("fixtures/cross_2x2x2.vol");

#[test]
fn reads_file_from_another_writer() {
    let v = Volume::from_bytes(CROSS_WRITER).unwrap();
    assert_eq!(v.dims(), Dims::new(2, 2, 2));
    assert_eq!(v.spacing(), [0.5, 0.5, 1.25]);
    let want = [-1000.0, 0.5, 2200.0, -0.25, 1e-3, 3.5e4, 7.0, -12.125];
    let mut k = 0;
    for z in 0..2 {
        for y in 0..2 {
            for x in 0..2 {
                assert_eq!(v.get(x, y, z), want[k] as f32, "({x},{y},{z})");
                k += 1;
            }
        }
    }
    assert_eq!(v.to_bytes(), CROSS_WRITER);
}

#[test]
fn save_and_load_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.vol");
    let v = Volume::from_fn(Dims::new(3, 4, 5), |x, y, z| (x * 100 + y * 10 + z) as f32 - 0.5).unwrap();
    v.save(&path).unwrap();
    assert_eq!(Volume::load(&path).unwrap(), v);
}

/// Ellipsoid membership written out directly from the tooth parameters.
fn inside_any(teeth: &[nexf_core::phantom::Tooth], x: usize, y: usize, z: usize) -> bool {
    teeth.iter().any(|t| {
        let dx = (x as f64 - t.center[0]) / t.axes[0];
        let dy = (y as f64 - t.center[1]) / t.axes[1];
        let dz = (z as f64 - t.center[2]) / t.axes[2];
        dx * dx + dy * dy + dz * dz <= 1.0
    })
}

#[test]
fn tooth_voxels_match_brute_force_count() {
    let spec = PhantomSpec::default();
    let dims = Dims::new(64, 64, 32);
    let vol = generate_phantom(&spec, dims).unwrap();
    let teeth = spec.teeth(dims).unwrap();
    assert_eq!(teeth.len(), 14);
    let mut brute = 0;
    let mut rendered = 0;
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                let hit = inside_any(&teeth, x, y, z);
                brute += usize::from(hit);
                rendered += usize::from(vol.get(x, y, z) == spec.tooth_intensity);
                assert_eq!(hit, vol.get(x, y, z) == spec.tooth_intensity, "({x},{y},{z})");
            }
        }
    }
    assert_eq!(brute, rendered);
    assert!(brute > 0);
    // every tooth owns at least one voxel
    for t in &teeth {
        let c = t.center.map(|c| c.round().max(0.0) as usize);
        assert_eq!(vol.get(c[0], c[1], c[2]), spec.tooth_intensity);
    }
}

#[test]
fn teeth_sit_at_equal_gaps_along_the_arch() {
    let spec = PhantomSpec {
        tooth_jitter: 0.0,
        ..PhantomSpec::default()
    };
    let dims = Dims::new(128, 128, 16);
    let teeth = spec.teeth(dims).unwrap();
    // Chord gaps between neighbours on a smooth arch vary slowly; ends are
    // mirror images for the symmetric default curve.
    let gap = |a: &nexf_core::phantom::Tooth, b: &nexf_core::phantom::Tooth| {
        (a.center[0] - b.center[0]).hypot(a.center[1] - b.center[1])
    };
    let n = teeth.len();
    let first = gap(&teeth[0], &teeth[1]);
    let last = gap(&teeth[n - 2], &teeth[n - 1]);
    assert!((first - last).abs() < 1e-6 * first);
}

#[test]
fn arch_mask_marks_non_background() {
    let spec = PhantomSpec::default();
    let vol = generate_phantom(&spec, Dims::new(16, 16, 8)).unwrap();
    let mask = arch_mask(&spec, &vol);
    let inside = mask.iter().filter(|m| **m).count();
    let non_bg = vol.data().iter().filter(|v| **v != spec.background_intensity).count();
    assert_eq!(inside, non_bg);
    assert!(inside > 0 && inside < mask.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bytes_round_trip(nx in 1usize..6, ny in 1usize..6, nz in 1usize..6, seed in any::<u64>()) {
        let dims = Dims::new(nx, ny, nz);
        let mut s = seed;
        let v = Volume::from_fn(dims, |_, _, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 40) as f32) / 1000.0 - 5000.0
        }).unwrap();
        prop_assert_eq!(Volume::from_bytes(&v.to_bytes()).unwrap(), v);
    }

    #[test]
    fn truncated_payload_is_rejected(cut in 1usize..32) {
        let v = Volume::filled(Dims::new(2, 2, 2), 1.0).unwrap();
        let bytes = v.to_bytes();
        prop_assert!(Volume::from_bytes(&bytes[..bytes.len() - cut]).is_err());
    }

    #[test]
    fn phantom_uses_only_declared_levels(seed in any::<u64>(), n in 8usize..20) {
        let spec = PhantomSpec { seed, ..PhantomSpec::default() };
        let vol = generate_phantom(&spec, Dims::new(n, n, 8)).unwrap();
        let levels = [spec.background_intensity, spec.soft_tissue_intensity, spec.jaw_intensity, spec.tooth_intensity];
        prop_assert!(vol.data().iter().all(|v| levels.contains(v)));
    }
}
