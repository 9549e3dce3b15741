use std::collections::BTreeMap;

/// Blob store keyed by location.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ObjectStore {
    blobs: BTreeMap<String, Vec<u8>>,
}

impl ObjectStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, key: impl Into<String>, bytes: Vec<u8>) {
        self.blobs.insert(key.into(), bytes);
    }

    pub fn get(&self, key: &str) -> Option<&[u8]> {
        self.blobs.get(key).map(Vec::as_slice)
    }

    pub fn delete(&mut self, key: &str) -> Option<Vec<u8>> {
        self.blobs.remove(key)
    }

    pub fn len(&self) -> usize {
        self.blobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blobs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[u8])> {
        self.blobs.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// `GET key` / `PUT key body`; returns an HTTP-style status and body.
    pub fn handle(&mut self, method: &str, key: &str, body: Option<Vec<u8>>) -> (u16, Vec<u8>) {
        match (method, body) {
            ("GET", _) => match self.get(key) {
                Some(b) => (200, b.to_vec()),
                None => (404, Vec::new()),
            },
            ("PUT", Some(b)) => {
                self.put(key, b);
                (201, Vec::new())
            }
            ("PUT", None) => (400, Vec::new()),
            _ => (405, Vec::new()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn http_style_access() {
        let mut s = ObjectStore::new();
        assert_eq!(s.handle("GET", "a", None).0, 404);
        assert_eq!(s.handle("PUT", "a", Some(vec![1, 2])).0, 201);
        assert_eq!(s.handle("GET", "a", None), (200, vec![1, 2]));
        assert_eq!(s.handle("DELETE", "a", None).0, 405);
    }

    proptest! {
        #[test]
        fn get_after_put(key in ".{0,20}", bytes in prop::collection::vec(any::<u8>(), 0..64)) {
            let mut s = ObjectStore::new();
            s.put(key.clone(), bytes.clone());
            prop_assert_eq!(s.get(&key), Some(bytes.as_slice()));
        }
    }
}
