/// Compressed row lists: group `i` is `indices[offsets[i]..offsets[i + 1]]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segments {
    offsets: Vec<usize>,
    indices: Vec<usize>,
}

impl Default for Segments {
    fn default() -> Self {
        Segments::new()
    }
}

impl Segments {
    pub fn from_groups<G: AsRef<[usize]>>(groups: &[G]) -> Self {
        let mut offsets = Vec::with_capacity(groups.len() + 1);
        let mut indices = Vec::new();
        offsets.push(0);
        for g in groups {
            indices.extend_from_slice(g.as_ref());
            offsets.push(indices.len());
        }
        Segments { offsets, indices }
    }

    pub fn new() -> Self {
        Segments {
            offsets: vec![0],
            indices: Vec::new(),
        }
    }

    pub fn push_group(&mut self, group: impl IntoIterator<Item = usize>) {
        self.indices.extend(group);
        self.offsets.push(self.indices.len());
    }

    /// Number of groups.
    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn group(&self, i: usize) -> &[usize] {
        &self.indices[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> + '_ {
        (0..self.len()).map(move |i| self.group(i))
    }
}
