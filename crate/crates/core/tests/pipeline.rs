//! End-to-end checks across modules: export round trips, worker-count independence, seed
//! contract of the sampler and coarse kernels for vector fields.

use std::sync::Arc;

use frd::elliptic::{generator_from_text, generator_to_text, Generator, MultiIndexSet};
use frd::frd_base::{base_decomposition, decomposition_from_text, decomposition_to_text, ExportedDecomposition, ScaleFunctions};
use frd::frd_improved::{final_decomposition, FinalParams};
use frd::lattice::TorusGeometry;
use frd::renorm::{coarse_kernel, local_identity_defect};
use frd::sampler::sample;
use frd::{par, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn setup(m: usize, n: u32) -> (Generator, TorusGeometry, Arc<ScaleFunctions>) {
    let set = MultiIndexSet::next_nearest(2);
    let a = Generator::random(&set, m, 0.5, 2.0, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
    let g = TorusGeometry::new(3, n, 2, m).unwrap();
    let f = Arc::new(ScaleFunctions::for_generator(&a, 3, n));
    (a, g, f)
}

#[test]
fn export_round_trip_is_bit_exact() -> Result<()> {
    let (a, g, f) = setup(2, 2);
    let dec = final_decomposition(&a, &g, f, &FinalParams { n: 1, n_tilde: 3, k_const: 1e-3 })?;
    let text = decomposition_to_text(&dec);
    let back = decomposition_from_text(&text)?;
    assert_eq!(back, ExportedDecomposition::from_decomposition(&dec));
    assert_eq!(decomposition_to_text(&dec), text);
    Ok(())
}

#[test]
fn generator_text_round_trip() -> Result<()> {
    let (a, _, _) = setup(2, 2);
    let back = generator_from_text(&generator_to_text(&a))?;
    assert_eq!(back.matrix(), a.matrix());
    Ok(())
}

#[test]
fn results_do_not_depend_on_worker_count() -> Result<()> {
    let (a, g, f) = setup(1, 3);
    let one = par::with_workers(Some(1), || base_decomposition(&a, &g, f.clone()))?;
    let many = par::with_workers(Some(4), || base_decomposition(&a, &g, f.clone()))?;
    assert_eq!(decomposition_to_text(&one), decomposition_to_text(&many));
    let s1 = par::with_workers(Some(1), || sample(&one.scale(1).spectral, 3, 8))?;
    let s4 = par::with_workers(Some(4), || sample(&one.scale(1).spectral, 3, 8))?;
    assert_eq!(s1.fields, s4.fields);
    Ok(())
}

#[test]
fn seeds_give_different_batches() -> Result<()> {
    let (a, g, f) = setup(1, 2);
    let dec = base_decomposition(&a, &g, f)?;
    let s1 = sample(&dec.scale(2).spectral, 1, 4)?;
    let s2 = sample(&dec.scale(2).spectral, 2, 4)?;
    let again = sample(&dec.scale(2).spectral, 1, 4)?;
    assert_ne!(s1.fields, s2.fields);
    assert_eq!(s1.fields, again.fields);
    Ok(())
}

#[test]
fn coarse_kernels_for_vector_fields() -> Result<()> {
    let (a, g, f) = setup(2, 3);
    let dec = base_decomposition(&a, &g, f)?;
    for k in 1..=3 {
        for nb in k as u32..=3 {
            let ck = coarse_kernel(&dec, k, nb)?;
            assert!(ck.route_gap < 1e-10, "k = {k}, nbar = {nb}: {}", ck.route_gap);
            assert!(local_identity_defect(&dec, &ck)? < 1e-9);
            assert!(ck.min_relative_mode > -1e-10);
        }
    }
    Ok(())
}
