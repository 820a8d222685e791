//! Local configurations (motifs) on a reference ball `B(0, r)`.
//!
//! A motif is determined by its set of positive vertices; every other vertex
//! of the ball is negative. Positions are ball-relative offsets in `Z^d`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lattice::{Norm, Offset, Signature, TorusLattice};

/// Default bound on the number of motifs a single enumeration may produce.
pub const DEFAULT_FAMILY_CAP: u128 = 1 << 20;

/// A local configuration `eta` of radius `r`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LocalConfig {
    signature: Signature,
    radius: usize,
    positives: Vec<Offset>,
}

impl LocalConfig {
    pub fn new<I>(signature: Signature, radius: usize, positives: I) -> Result<Self>
    where
        I: IntoIterator<Item = Offset>,
    {
        let ball: BTreeSet<Offset> = signature.ball_offsets(radius).into_iter().collect();
        let mut set = BTreeSet::new();
        for p in positives {
            if p.len() != signature.dim {
                return Err(Error::InvalidMotif(format!(
                    "offset {p:?} has {} coordinates, expected {}",
                    p.len(),
                    signature.dim
                )));
            }
            if !ball.contains(&p) {
                return Err(Error::InvalidMotif(format!(
                    "offset {p:?} lies outside the ball of radius {radius}"
                )));
            }
            set.insert(p);
        }
        Ok(LocalConfig {
            signature,
            radius,
            positives: set.into_iter().collect(),
        })
    }

    /// `eta^0`: every vertex of the ball negative.
    pub fn null(signature: Signature, radius: usize) -> Self {
        LocalConfig {
            signature,
            radius,
            positives: Vec::new(),
        }
    }

    /// A single positive vertex at the center of the ball.
    pub fn single_center(signature: Signature, radius: usize) -> Self {
        LocalConfig {
            signature,
            radius,
            positives: vec![vec![0; signature.dim]],
        }
    }

    pub fn signature(&self) -> Signature {
        self.signature
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// `V_+(eta)`, sorted lexicographically.
    pub fn positives(&self) -> &[Offset] {
        &self.positives
    }

    /// Offsets of the reference ball this motif lives on.
    pub fn ball_offsets(&self) -> Vec<Offset> {
        self.signature.ball_offsets(self.radius)
    }

    pub fn is_positive(&self, offset: &[i64]) -> bool {
        self.positives.binary_search_by(|p| p.as_slice().cmp(offset)).is_ok()
    }

    /// `k(eta)`.
    pub fn k(&self) -> usize {
        self.positives.len()
    }

    /// Edges with both endpoints positive.
    fn positive_edges(&self) -> usize {
        let steps: BTreeSet<Offset> = self.signature.neighbor_offsets().into_iter().collect();
        let mut count = 0;
        for (i, a) in self.positives.iter().enumerate() {
            for b in &self.positives[i + 1..] {
                let diff: Offset = b.iter().zip(a).map(|(x, y)| x - y).collect();
                if steps.contains(&diff) {
                    count += 1;
                }
            }
        }
        count
    }

    /// `gamma(eta) = V * k - 2 * |edges inside V_+|`.
    pub fn perimeter(&self) -> usize {
        self.signature.degree() * self.k() - 2 * self.positive_edges()
    }

    /// Edges inside the ball joining a positive and a negative vertex.
    /// Equals the perimeter when the motif is clean.
    pub fn opposite_pairs(&self) -> usize {
        let steps = self.signature.neighbor_offsets();
        let ball: BTreeSet<Offset> = self.ball_offsets().into_iter().collect();
        let mut count = 0;
        for p in &self.positives {
            for s in &steps {
                let q: Offset = p.iter().zip(s).map(|(a, b)| a + b).collect();
                if ball.contains(&q) && !self.is_positive(&q) {
                    count += 1;
                }
            }
        }
        count
    }

    /// Whether every positive vertex lies in `B(0, r - 1)`.
    pub fn is_clean(&self) -> bool {
        if self.radius == 0 {
            return self.positives.is_empty();
        }
        let inner: BTreeSet<Offset> = self.signature.ball_offsets(self.radius - 1).into_iter().collect();
        self.positives.iter().all(|p| inner.contains(p))
    }

    /// The ringed motif: same positives on `B(0, r + 1)`, outer shell negative.
    pub fn ring(&self) -> LocalConfig {
        LocalConfig {
            signature: self.signature,
            radius: self.radius + 1,
            positives: self.positives.clone(),
        }
    }

    /// `D_r(eta)`: motifs of the same radius whose positives contain ours.
    pub fn superset_family(&self, cap: u128) -> Result<Vec<LocalConfig>> {
        let free: Vec<Offset> = self
            .ball_offsets()
            .into_iter()
            .filter(|o| !self.is_positive(o))
            .collect();
        let requested = 1u128.checked_shl(free.len() as u32).unwrap_or(u128::MAX);
        if requested > cap {
            return Err(Error::FamilyTooLarge { requested, cap });
        }
        Ok((0..requested as u64)
            .map(|mask| {
                let mut positives = self.positives.clone();
                positives.extend(
                    free.iter()
                        .enumerate()
                        .filter(|(i, _)| mask >> i & 1 == 1)
                        .map(|(_, o)| o.clone()),
                );
                positives.sort();
                LocalConfig {
                    signature: self.signature,
                    radius: self.radius,
                    positives,
                }
            })
            .collect())
    }

    /// Rejects lattices with another signature or with `n <= 2 rho r`.
    pub fn check_lattice(&self, lattice: &TorusLattice) -> Result<()> {
        if lattice.signature() != self.signature {
            return Err(Error::MismatchedLattice {
                motif: self.signature.to_string(),
                lattice: lattice.signature().to_string(),
            });
        }
        let bound = 2 * lattice.range() * self.radius;
        if lattice.side() <= bound {
            return Err(Error::LatticeTooSmall {
                side: lattice.side(),
                bound,
            });
        }
        Ok(())
    }

    /// Canonical text form: a motif file with no size hint and no comments.
    pub fn canonical_text(&self) -> String {
        MotifFile {
            motif: self.clone(),
            n_hint: 0,
        }
        .to_text()
    }

    /// Stable short identifier derived from the canonical text.
    pub fn hash_hex(&self) -> String {
        let digest = Sha256::digest(self.canonical_text().as_bytes());
        hex::encode(&digest[..8])
    }
}

/// Every motif on `B(0, radius)`, ordered by bitmask over the lexicographic ball order.
pub fn enumerate_all(signature: Signature, radius: usize, cap: u128) -> Result<Vec<LocalConfig>> {
    LocalConfig::null(signature, radius).superset_family(cap)
}

/// `D_radius^{>k_min}`: motifs with at least `k_min + 1` positive vertices.
pub fn enumerate_exceeding(
    signature: Signature,
    radius: usize,
    k_min: usize,
    cap: u128,
) -> Result<Vec<LocalConfig>> {
    Ok(enumerate_all(signature, radius, cap)?
        .into_iter()
        .filter(|m| m.k() > k_min)
        .collect())
}

/// A motif together with the optional lattice-size hint of its file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MotifFile {
    pub motif: LocalConfig,
    /// 0 means "any size".
    pub n_hint: usize,
}

impl MotifFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());

        let (hline, header) = lines.next().ok_or(Error::MotifParse {
            line: 1,
            message: "missing header `d n_hint rho p r`".into(),
        })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let perr = |message: String| Error::MotifParse { line: hline, message };
        let (d, n_hint, rho, p, r) = match fields.as_slice() {
            [d, n, rho, p, r] => (*d, Some(*n), *rho, *p, *r),
            [d, rho, p, r] => (*d, None, *rho, *p, *r),
            _ => {
                return Err(perr(format!(
                    "header needs 4 or 5 fields (`d [n_hint] rho p r`), found {}",
                    fields.len()
                )))
            }
        };
        let int = |s: &str, what: &str| {
            s.parse::<usize>()
                .map_err(|_| perr(format!("{what} must be a nonnegative integer, got `{s}`")))
        };
        let dim = int(d, "d")?;
        let n_hint = n_hint.map(|s| int(s, "n_hint")).transpose()?.unwrap_or(0);
        let range = int(rho, "rho")?;
        let norm: Norm = p.parse().map_err(|e: Error| perr(e.to_string()))?;
        let radius = int(r, "r")?;
        let signature = Signature::new(dim, range, norm).map_err(|e| perr(e.to_string()))?;

        let mut positives = Vec::new();
        for (line, body) in lines {
            let coords: std::result::Result<Offset, _> =
                body.split_whitespace().map(str::parse::<i64>).collect();
            let coords = coords.map_err(|_| Error::MotifParse {
                line,
                message: format!("expected {dim} integers, got `{body}`"),
            })?;
            if coords.len() != dim {
                return Err(Error::MotifParse {
                    line,
                    message: format!("expected {dim} integers, got {}", coords.len()),
                });
            }
            positives.push((line, coords));
        }
        let ball: BTreeSet<Offset> = signature.ball_offsets(radius).into_iter().collect();
        for (line, c) in &positives {
            if !ball.contains(c) {
                return Err(Error::MotifParse {
                    line: *line,
                    message: format!("vertex {c:?} is outside the ball of radius {radius}"),
                });
            }
        }
        let motif = LocalConfig::new(signature, radius, positives.into_iter().map(|(_, c)| c))?;
        Ok(MotifFile { motif, n_hint })
    }

    pub fn to_text(&self) -> String {
        let sig = self.motif.signature();
        let mut out = format!(
            "{} {} {} {} {}\n",
            sig.dim,
            self.n_hint,
            sig.range,
            sig.norm,
            self.motif.radius()
        );
        for p in self.motif.positives() {
            let line: Vec<String> = p.iter().map(i64::to_string).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::parse(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}
