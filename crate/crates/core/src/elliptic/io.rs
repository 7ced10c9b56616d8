//! Text form of a generator: `d`, `m`, the class constants, the ordered multi-index list and
//! every block `A_{alpha beta}` as row-major rows. Floats are written in shortest round-trip
//! decimal form, so parsing the text reproduces the generator bit for bit.

use serde::{Deserialize, Serialize};

use super::{Generator, MultiIndexSet};
use crate::{FrdError, RMat, Result};

#[derive(Serialize, Deserialize)]
struct GeneratorDoc {
    d: usize,
    m: usize,
    omega0: f64,
    big_omega0: f64,
    indices: Vec<Vec<u32>>,
    blocks: Vec<BlockDoc>,
}

#[derive(Serialize, Deserialize)]
struct BlockDoc {
    alpha: Vec<u32>,
    beta: Vec<u32>,
    rows: Vec<Vec<f64>>,
}

pub fn generator_to_text(g: &Generator) -> String {
    let set = g.set();
    let mut blocks = Vec::new();
    for (a, alpha) in set.indices().iter().enumerate() {
        for (b, beta) in set.indices().iter().enumerate() {
            let blk = g.block(a, b);
            let rows = (0..g.m()).map(|r| (0..g.m()).map(|c| blk[(r, c)]).collect()).collect();
            blocks.push(BlockDoc { alpha: alpha.clone(), beta: beta.clone(), rows });
        }
    }
    let doc = GeneratorDoc {
        d: set.d(),
        m: g.m(),
        omega0: g.omega0(),
        big_omega0: g.big_omega0(),
        indices: set.indices().to_vec(),
        blocks,
    };
    toml::to_string(&doc).expect("generator document serializes")
}

/// Parses [`generator_to_text`] output. Missing blocks are zero.
pub fn generator_from_text(text: &str) -> Result<Generator> {
    let doc: GeneratorDoc = toml::from_str(text).map_err(|e| FrdError::Parse(e.to_string()))?;
    let set = MultiIndexSet::new(doc.d, doc.indices)?;
    let m = doc.m;
    let n = m * set.len();
    let mut matrix = RMat::zeros(n, n);
    for blk in doc.blocks {
        let a = set
            .position(&blk.alpha)
            .ok_or_else(|| FrdError::Parse(format!("block index {:?} not in the set", blk.alpha)))?;
        let b = set
            .position(&blk.beta)
            .ok_or_else(|| FrdError::Parse(format!("block index {:?} not in the set", blk.beta)))?;
        if blk.rows.len() != m || blk.rows.iter().any(|r| r.len() != m) {
            return Err(FrdError::Parse(format!("block ({:?}, {:?}) is not {m}x{m}", blk.alpha, blk.beta)));
        }
        for (r, row) in blk.rows.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                matrix[(a * m + r, b * m + c)] = *v;
            }
        }
    }
    Generator::new(set, m, matrix, doc.omega0, doc.big_omega0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn laplacian_text_is_readable() {
        let set = MultiIndexSet::first_order(2);
        let g = Generator::laplacian(&set, 1, 0.5, 2.0).unwrap();
        let text = generator_to_text(&g);
        assert!(text.contains("indices"));
        assert_eq!(generator_from_text(&text).unwrap(), g);
    }

    #[test]
    fn rejects_unknown_block() {
        let text = "d = 2\nm = 1\nomega0 = 0.5\nbig_omega0 = 2.0\nindices = [[1, 0], [0, 1]]\n\n[[blocks]]\nalpha = [2, 0]\nbeta = [1, 0]\nrows = [[1.0]]\n";
        assert!(generator_from_text(text).is_err());
    }

    proptest! {
        #[test]
        fn random_generators_round_trip_exactly(seed in 0u64..10_000, m in 1usize..3, wide in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let set = if wide { MultiIndexSet::next_nearest(2) } else { MultiIndexSet::first_order(2) };
            let g = Generator::random(&set, m, 0.5, 2.0, &mut rng).unwrap();
            let back = generator_from_text(&generator_to_text(&g)).unwrap();
            prop_assert_eq!(back.matrix(), g.matrix());
            prop_assert_eq!(back, g);
        }
    }
}
