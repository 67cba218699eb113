//! The single-qubit Clifford group `⟨S, H⟩` modulo global phase.
//!
//! Generator index 0 is always the target gate (here `S`); index 1 is `H`.
//! Words are written in application order: `(a, b, c)` means apply `V_a`
//! first, so the element is `V_c V_b V_a`. Canonical words minimize the number
//! of target occurrences, then total length, then lexicographic order.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use num_rational::Ratio;
use num_complex::Complex64;
use serde::Serialize;

use crate::channels::{gates, CMatrix};
use crate::error::{Error, Result};

/// Index of the target generator in every word.
pub const TARGET: u8 = 0;
/// Index of the Hadamard generator in the standard presentation.
pub const HADAMARD: u8 = 1;

const PHASE_TOL: f64 = 1e-9;

/// Ordered generator indices, in application order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct GeneratorWord(pub Vec<u8>);

impl GeneratorWord {
    pub fn identity() -> Self {
        Self(Vec::new())
    }

    pub fn indices(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn target_count(&self) -> usize {
        self.0.iter().filter(|&&i| i == TARGET).count()
    }

    /// Ordered product of generator matrices for this word.
    pub fn unitary(&self, generators: &[CMatrix]) -> CMatrix {
        let d = generators[0].nrows();
        self.0
            .iter()
            .fold(CMatrix::identity(d, d), |acc, &i| &generators[i as usize] * acc)
    }

    /// Renders the word with one letter per generator, e.g. `"HSH"`.
    pub fn render(&self, names: &[&str]) -> String {
        self.0.iter().map(|&i| names[i as usize]).collect()
    }

    fn search_key(&self) -> (usize, usize, Vec<u8>) {
        (self.target_count(), self.len(), self.0.clone())
    }
}

#[derive(Debug, Clone)]
pub struct GroupElement {
    pub id: usize,
    /// Representative with the first non-negligible entry real and positive.
    pub unitary: CMatrix,
    pub word: GeneratorWord,
    pub target_count: usize,
}

/// Multiplication table, inverses and the partition by target count.
#[derive(Debug, Clone)]
pub struct GroupTable {
    generators: Vec<CMatrix>,
    elements: Vec<GroupElement>,
    /// `product[a][b]` is the id of `U_a U_b` (apply `b` first).
    product: Vec<Vec<usize>>,
    inverse: Vec<usize>,
    partition_sizes: Vec<usize>,
}

/// Removes the global phase by rotating the first non-negligible entry
/// (row-major) onto the positive real axis.
pub fn normalize_phase(u: &CMatrix) -> CMatrix {
    let (rows, cols) = u.shape();
    for r in 0..rows {
        for c in 0..cols {
            let z = u[(r, c)];
            if z.norm() > PHASE_TOL {
                let phase = z.conj() / z.norm();
                return u.map(|w| w * phase);
            }
        }
    }
    u.clone()
}

/// Hashable fingerprint of a phase-normalized matrix.
fn fingerprint(u: &CMatrix) -> Vec<(i64, i64)> {
    let scale = 1e8;
    // Row-major so the key does not depend on storage order.
    let (rows, cols) = u.shape();
    let mut key = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let z: Complex64 = u[(r, c)];
            key.push(((z.re * scale).round() as i64, (z.im * scale).round() as i64));
        }
    }
    key
}

/// `U` and `V` are the same element when `|Tr(U† V)| = d`.
pub fn equal_up_to_phase(u: &CMatrix, v: &CMatrix) -> bool {
    ((u.adjoint() * v).trace().norm() - u.nrows() as f64).abs() < PHASE_TOL
}

impl GroupTable {
    /// Enumerates the group generated by `generators` (index 0 is the target)
    /// with a uniform-cost search over appended generators, keyed by
    /// (target count, length, lexicographic word).
    pub fn generate(generators: &[CMatrix]) -> Result<Self> {
        if generators.is_empty() || generators.len() > u8::MAX as usize {
            return Err(Error::Validation("need between 1 and 255 generators".into()));
        }
        let d = generators[0].nrows();
        if generators.iter().any(|g| g.shape() != (d, d)) {
            return Err(Error::Validation("generators must share one square shape".into()));
        }

        let mut index: HashMap<Vec<(i64, i64)>, usize> = HashMap::new();
        let mut elements: Vec<GroupElement> = Vec::new();
        let mut queue = BinaryHeap::new();
        queue.push(Reverse(GeneratorWord::identity().search_key()));

        while let Some(Reverse((_, _, indices))) = queue.pop() {
            let word = GeneratorWord(indices);
            let unitary = normalize_phase(&word.unitary(generators));
            let key = fingerprint(&unitary);
            if index.contains_key(&key) {
                continue;
            }
            let id = elements.len();
            index.insert(key, id);
            for g in 0..generators.len() as u8 {
                let mut next = word.0.clone();
                next.push(g);
                let next = GeneratorWord(next);
                let next_unitary = normalize_phase(&next.unitary(generators));
                if !index.contains_key(&fingerprint(&next_unitary)) {
                    queue.push(Reverse(next.search_key()));
                }
            }
            let target_count = word.target_count();
            elements.push(GroupElement { id, unitary, word, target_count });
            if elements.len() > 100_000 {
                return Err(Error::Validation("generated group is too large".into()));
            }
        }

        let lookup = |m: &CMatrix| -> Result<usize> {
            index
                .get(&fingerprint(&normalize_phase(m)))
                .copied()
                .ok_or_else(|| Error::Validation("group is not closed under multiplication".into()))
        };

        let n = elements.len();
        let mut product = vec![vec![0usize; n]; n];
        for a in 0..n {
            for b in 0..n {
                product[a][b] = lookup(&(&elements[a].unitary * &elements[b].unitary))?;
            }
        }
        let identity = 0;
        let inverse = (0..n)
            .map(|a| {
                (0..n)
                    .find(|&b| product[a][b] == identity)
                    .ok_or_else(|| Error::Validation(format!("element {a} has no inverse")))
            })
            .collect::<Result<Vec<_>>>()?;

        let max_count = elements.iter().map(|e| e.target_count).max().unwrap_or(0);
        let mut partition_sizes = vec![0usize; max_count + 1];
        for e in &elements {
            partition_sizes[e.target_count] += 1;
        }

        Ok(Self { generators: generators.to_vec(), elements, product, inverse, partition_sizes })
    }

    /// Replaces the canonical words with an explicit presentation. Every word
    /// is given in application order; the list must name each element exactly once.
    pub fn with_presentation(mut self, words: &[Vec<u8>]) -> Result<Self> {
        if words.len() != self.order() {
            return Err(Error::Validation(format!(
                "presentation lists {} words for a group of order {}",
                words.len(),
                self.order()
            )));
        }
        let mut assigned: Vec<Option<GeneratorWord>> = vec![None; self.order()];
        for w in words {
            let id = self
                .find_word(w)
                .ok_or_else(|| Error::Validation(format!("word {w:?} is not a group element")))?;
            if assigned[id].is_some() {
                return Err(Error::Validation(format!("element {id} is listed twice")));
            }
            assigned[id] = Some(GeneratorWord(w.clone()));
        }
        for (e, w) in self.elements.iter_mut().zip(assigned) {
            let w = w.expect("every slot filled: counts match and no duplicates");
            e.target_count = w.target_count();
            e.word = w;
        }
        let max_count = self.elements.iter().map(|e| e.target_count).max().unwrap_or(0);
        self.partition_sizes = vec![0; max_count + 1];
        for e in &self.elements {
            self.partition_sizes[e.target_count] += 1;
        }
        Ok(self)
    }

    /// The twirling group `⟨S, H⟩` with `S` as the target.
    pub fn clifford() -> Self {
        Self::generate(&[gates::phase(), gates::hadamard()])
            .expect("the single-qubit Clifford group is finite and closed")
    }

    pub fn order(&self) -> usize {
        self.elements.len()
    }

    pub fn elements(&self) -> &[GroupElement] {
        &self.elements
    }

    pub fn element(&self, id: usize) -> Result<&GroupElement> {
        self.elements.get(id).ok_or(Error::OutOfRange { index: id, order: self.order() })
    }

    pub fn generators(&self) -> &[CMatrix] {
        &self.generators
    }

    pub fn identity_id(&self) -> usize {
        0
    }

    /// Id of `U_a U_b`.
    pub fn product(&self, a: usize, b: usize) -> Result<usize> {
        self.check(a)?;
        self.check(b)?;
        Ok(self.product[a][b])
    }

    pub fn invert(&self, id: usize) -> Result<usize> {
        self.check(id)?;
        Ok(self.inverse[id])
    }

    /// `|G_0|, |G_1|, ...`
    pub fn partition_sizes(&self) -> &[usize] {
        &self.partition_sizes
    }

    /// Id of the element equal (up to phase) to `u`, if any.
    pub fn find(&self, u: &CMatrix) -> Option<usize> {
        self.elements.iter().find(|e| equal_up_to_phase(&e.unitary, u)).map(|e| e.id)
    }

    /// Id of the element produced by a word in application order.
    pub fn find_word(&self, word: &[u8]) -> Option<usize> {
        if word.iter().any(|&i| i as usize >= self.generators.len()) {
            return None;
        }
        self.find(&GeneratorWord(word.to_vec()).unitary(&self.generators))
    }

    fn check(&self, id: usize) -> Result<()> {
        if id < self.order() {
            Ok(())
        } else {
            Err(Error::OutOfRange { index: id, order: self.order() })
        }
    }

    /// JSON document listing elements, canonical words and the partition.
    pub fn to_json(&self, names: &[&str]) -> serde_json::Value {
        #[derive(Serialize)]
        struct ElementDump {
            id: usize,
            word: String,
            indices: Vec<u8>,
            target_count: usize,
            unitary_re: Vec<Vec<f64>>,
            unitary_im: Vec<Vec<f64>>,
        }
        let elements: Vec<ElementDump> = self
            .elements
            .iter()
            .map(|e| ElementDump {
                id: e.id,
                word: if e.word.is_empty() { "1".into() } else { e.word.render(names) },
                indices: e.word.0.clone(),
                target_count: e.target_count,
                unitary_re: (0..e.unitary.nrows())
                    .map(|r| (0..e.unitary.ncols()).map(|c| e.unitary[(r, c)].re).collect())
                    .collect(),
                unitary_im: (0..e.unitary.nrows())
                    .map(|r| (0..e.unitary.ncols()).map(|c| e.unitary[(r, c)].im).collect())
                    .collect(),
            })
            .collect();
        let nbar = n_bar(self);
        serde_json::json!({
            "order": self.order(),
            "generators": names,
            "partition_sizes": self.partition_sizes,
            "n_bar": { "numer": nbar.numer(), "denom": nbar.denom(), "value": ratio_to_f64(nbar) },
            "inverse": self.inverse,
            "elements": elements,
        })
    }
}

/// The published listing of `⟨S, H⟩` grouped by target count, written as
/// operator products (rightmost factor applied first). It covers all 24
/// elements but is not minimal: `SSS` equals `HSHSH` up to phase, for example.
pub const LISTED_PARTITION: [&[&str]; 5] = [
    &["", "H"],
    &["S", "HS", "SH", "HSH"],
    &["SS", "HSS", "SHS", "SSH", "HSHS", "HSSH"],
    &["SSS", "HSSS", "SHSS", "SSHS", "HSHSS", "HSSHS", "SHSSH", "HSHSSH"],
    &["SHSSS", "SSHSS", "HSHSSS", "HSSHSS"],
];

/// Parses an `S`/`H` operator product into a word in application order.
pub fn parse_product(product: &str) -> Result<Vec<u8>> {
    product
        .chars()
        .rev()
        .map(|c| match c {
            'S' => Ok(TARGET),
            'H' => Ok(HADAMARD),
            other => Err(Error::Validation(format!("unknown generator `{other}`"))),
        })
        .collect()
}

/// `⟨S, H⟩` with canonical words taken from [`LISTED_PARTITION`].
pub fn listed_clifford() -> Result<GroupTable> {
    let words = LISTED_PARTITION
        .iter()
        .flat_map(|row| row.iter())
        .map(|w| parse_product(w))
        .collect::<Result<Vec<_>>>()?;
    GroupTable::clifford().with_presentation(&words)
}

/// Average number of target occurrences over canonical words,
/// `Σ_n n |G_n| / |G|`, as an exact fraction.
pub fn n_bar(table: &GroupTable) -> Ratio<u64> {
    n_bar_from_partition(table.partition_sizes())
}

pub fn n_bar_from_partition(sizes: &[usize]) -> Ratio<u64> {
    let total: u64 = sizes.iter().map(|&s| s as u64).sum();
    if total == 0 {
        return Ratio::from_integer(0);
    }
    let weighted: u64 = sizes.iter().enumerate().map(|(n, &s)| n as u64 * s as u64).sum();
    Ratio::new(weighted, total)
}

pub fn ratio_to_f64(r: Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clifford_group_minimal_partition() {
        let g = GroupTable::clifford();
        assert_eq!(g.order(), 24);
        assert_eq!(g.partition_sizes(), &[2, 4, 8, 8, 2]);
        assert_eq!(n_bar(&g), Ratio::new(13, 6));
    }

    #[test]
    fn listed_partition_is_a_valid_presentation() {
        let g = listed_clifford().unwrap();
        assert_eq!(g.partition_sizes(), &[2, 4, 6, 8, 4]);
        assert_eq!(n_bar(&g), Ratio::new(7, 3));
    }

    #[test]
    fn s_cubed_needs_only_two_targets() {
        let g = GroupTable::clifford();
        let sss = g.find_word(&[0, 0, 0]).unwrap();
        let hshsh = g.find_word(&[1, 0, 1, 0, 1]).unwrap();
        assert_eq!(sss, hshsh);
        assert_eq!(g.element(sss).unwrap().target_count, 2);
    }

    #[test]
    fn presentation_rejects_duplicates() {
        let mut words: Vec<Vec<u8>> =
            GroupTable::clifford().elements().iter().map(|e| e.word.0.clone()).collect();
        words[1] = vec![];
        assert!(GroupTable::clifford().with_presentation(&words).is_err());
    }

    #[test]
    fn identity_is_empty_word() {
        let g = GroupTable::clifford();
        let e = g.element(g.identity_id()).unwrap();
        assert!(e.word.is_empty());
        assert_eq!(e.target_count, 0);
        assert!(equal_up_to_phase(&e.unitary, &gates::identity(2)));
    }

    #[test]
    fn sqrt_x_has_one_target_use() {
        let g = GroupTable::clifford();
        let id = g.find_word(&[1, 0, 1]).unwrap();
        assert_eq!(g.element(id).unwrap().target_count, 1);
    }

    #[test]
    fn inverses() {
        let g = GroupTable::clifford();
        let id = g.identity_id();
        assert_eq!(g.invert(id).unwrap(), id);
        let s = g.find_word(&[0]).unwrap();
        let sss = g.find_word(&[0, 0, 0]).unwrap();
        assert_eq!(g.invert(s).unwrap(), sss);
        let h = g.find_word(&[1]).unwrap();
        assert_eq!(g.invert(h).unwrap(), h);
        assert!(matches!(g.invert(24), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn n_bar_degenerate_cases() {
        // {1, H}: the target never appears.
        assert_eq!(n_bar_from_partition(&[2]), Ratio::from_integer(0));
        let g = GroupTable::generate(&[gates::identity(2), gates::hadamard()]).unwrap();
        assert_eq!(g.order(), 2);
        assert_eq!(n_bar(&g), Ratio::from_integer(0));
    }

    #[test]
    fn words_reproduce_unitaries() {
        let g = GroupTable::clifford();
        for e in g.elements() {
            let prod = e.word.unitary(g.generators());
            assert!(((prod.adjoint() * &e.unitary).trace().norm() - 2.0).abs() < 1e-9);
            assert_eq!(e.target_count, e.word.target_count());
        }
    }

    #[test]
    fn json_dump_lists_partition() {
        let g = GroupTable::clifford();
        let v = g.to_json(&["S", "H"]);
        assert_eq!(v["order"], 24);
        assert_eq!(v["partition_sizes"], serde_json::json!([2, 4, 8, 8, 2]));
        assert_eq!(v["n_bar"]["numer"], 13);
        assert_eq!(v["elements"][0]["word"], "1");
    }
}
