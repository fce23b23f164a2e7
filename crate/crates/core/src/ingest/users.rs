//! Interned user identifiers. The CDR hot path resolves each user token to
//! a dense index once, so downstream state is keyed by `u32` instead of
//! re-hashed strings.

use std::collections::HashMap;

#[derive(Debug, Default)]
pub struct UserTable {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl UserTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        let i = self.names.len() as u32;
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), i);
        i
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, i: u32) -> &str {
        &self.names[i as usize]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// User indices ordered by user id string; output files sort this way.
    pub fn sorted_indices(&self) -> Vec<u32> {
        let mut idx: Vec<u32> = (0..self.names.len() as u32).collect();
        idx.sort_by(|&a, &b| self.names[a as usize].cmp(&self.names[b as usize]));
        idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interning_is_stable_and_sorted_order_is_lexicographic() {
        let mut t = UserTable::new();
        let b = t.intern("bob");
        let a = t.intern("alice");
        assert_eq!(t.intern("bob"), b);
        assert_eq!(t.len(), 2);
        assert_eq!(t.sorted_indices(), vec![a, b]);
    }
}
