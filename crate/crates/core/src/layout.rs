use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Textual,
    Visual,
}

/// Partition of sequence positions into textual and visual tokens.
///
/// Stored as one modality tag per occupied position, so the two index sets are disjoint and
/// cover every position by construction. Generated tokens are always textual.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenLayout {
    kinds: Vec<Modality>,
}

impl TokenLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// `prefix` textual positions, then `n_visual` visual ones, then `suffix` textual ones.
    pub fn from_prompt(prefix: usize, n_visual: usize, suffix: usize) -> Self {
        let mut kinds = vec![Modality::Textual; prefix];
        kinds.extend(std::iter::repeat_n(Modality::Visual, n_visual));
        kinds.extend(std::iter::repeat_n(Modality::Textual, suffix));
        Self { kinds }
    }

    /// Builds a layout from explicit index sets, which must be disjoint and together cover `0..n`.
    pub fn from_indices(textual: &[usize], visual: &[usize]) -> Result<Self> {
        let n = textual.len() + visual.len();
        let mut kinds: Vec<Option<Modality>> = vec![None; n];
        for (set, kind) in [(textual, Modality::Textual), (visual, Modality::Visual)] {
            for &i in set {
                let slot = kinds.get_mut(i).ok_or_else(|| {
                    Error::InvalidLayout(format!("index {i} leaves a gap in 0..{n}"))
                })?;
                if slot.is_some() {
                    return Err(Error::InvalidLayout(format!("index {i} listed twice")));
                }
                *slot = Some(kind);
            }
        }
        Ok(Self { kinds: kinds.into_iter().map(|k| k.expect("all filled")).collect() })
    }

    pub fn push_generated(&mut self) {
        self.kinds.push(Modality::Textual);
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn modality(&self, pos: usize) -> Result<Modality> {
        self.kinds.get(pos).copied().ok_or(Error::UncoveredPosition(pos))
    }

    pub fn kinds(&self) -> &[Modality] {
        &self.kinds
    }

    pub fn textual_indices(&self) -> Vec<usize> {
        self.indices(Modality::Textual)
    }

    pub fn visual_indices(&self) -> Vec<usize> {
        self.indices(Modality::Visual)
    }

    pub fn n_visual(&self) -> usize {
        self.kinds.iter().filter(|k| **k == Modality::Visual).count()
    }

    fn indices(&self, m: Modality) -> Vec<usize> {
        self.kinds.iter().enumerate().filter(|(_, k)| **k == m).map(|(i, _)| i).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompt_layout_blocks() {
        let mut l = TokenLayout::from_prompt(2, 3, 1);
        assert_eq!(l.textual_indices(), vec![0, 1, 5]);
        assert_eq!(l.visual_indices(), vec![2, 3, 4]);
        l.push_generated();
        assert_eq!(l.modality(6).unwrap(), Modality::Textual);
        assert!(l.modality(7).is_err());
    }

    #[test]
    fn from_indices_validates() {
        let l = TokenLayout::from_indices(&[0, 3], &[1, 2]).unwrap();
        assert_eq!(l.visual_indices(), vec![1, 2]);
        assert!(TokenLayout::from_indices(&[0, 1], &[1]).is_err());
        assert!(TokenLayout::from_indices(&[0, 4], &[1]).is_err());
    }
}
