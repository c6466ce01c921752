//! Closed-vocabulary baseline: every slot is classified over its ontology
//! values plus `None` and `dontcare`, from the dialog embedding alone.

use crate::corpus::{normalize_value, Ontology, Schema, DONTCARE};
use crate::error::{Error, Result};
use crate::nn::{softmax, Affine, HasParams, Initializer, Parameter};

/// Ordered classes for one slot: `None`, `dontcare`, then the sorted
/// ontology values.
pub fn class_list(values: &[String]) -> Vec<Option<String>> {
    let mut out = vec![None, Some(DONTCARE.to_string())];
    let mut rest: Vec<String> = values
        .iter()
        .map(|v| normalize_value(v))
        .filter(|v| v != DONTCARE)
        .collect();
    rest.sort();
    rest.dedup();
    out.extend(rest.into_iter().map(Some));
    out
}

/// Class lists for every schema slot, in schema order.
pub fn class_lists(schema: &Schema, ontology: &Ontology) -> Vec<Vec<Option<String>>> {
    schema.slots().iter().map(|s| class_list(ontology.values(s))).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct JstHead {
    classes: Vec<Vec<Option<String>>>,
    layers: Vec<Affine>,
}

impl JstHead {
    pub fn new(encoding_dim: usize, schema: &Schema, classes: Vec<Vec<Option<String>>>, init: &mut Initializer) -> Result<Self> {
        if classes.len() != schema.len() {
            return Err(Error::shape("jst_head", schema.len(), classes.len()));
        }
        let layers = schema
            .slots()
            .iter()
            .zip(&classes)
            .map(|(slot, c)| Affine::new(&format!("jst.{slot}"), encoding_dim, c.len(), init))
            .collect();
        Ok(JstHead { classes, layers })
    }

    pub fn slot_count(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self, slot: usize) -> Result<&[Option<String>]> {
        self.classes
            .get(slot)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownSlot(format!("slot index {slot}")))
    }

    pub fn all_classes(&self) -> &[Vec<Option<String>>] {
        &self.classes
    }

    /// Index of `value` in the slot's class list; `None` when the value is
    /// outside the closed vocabulary.
    pub fn class_index(&self, slot: usize, value: Option<&str>) -> Result<Option<usize>> {
        let value = value.map(normalize_value);
        Ok(self.classes(slot)?.iter().position(|c| c.as_deref() == value.as_deref()))
    }

    pub fn logits(&self, e: &[f64], slot: usize) -> Result<Vec<f64>> {
        self.classes(slot)?;
        self.layers[slot].forward(e)
    }

    pub fn probs(&self, e: &[f64], slot: usize) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(e, slot)?))
    }

    /// Accumulates the slot layer's gradients; returns `dL/de`.
    pub fn backward(&mut self, e: &[f64], slot: usize, dlogits: &[f64]) -> Result<Vec<f64>> {
        self.classes(slot)?;
        self.layers[slot].backward(e, dlogits)
    }
}

/// Highest-probability class of a slot; ties go to the earlier class.
pub fn jst_decode(probs: &[f64], classes: &[Option<String>]) -> Option<String> {
    assert_eq!(probs.len(), classes.len(), "distribution does not match the class list");
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    classes[best].clone()
}

impl HasParams for JstHead {
    fn params(&self) -> Vec<&Parameter> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn setup() -> (Schema, Ontology) {
        let schema = Schema::from_names(&["hotel.semi.area", "bus.book.people"]).unwrap();
        let mut raw = BTreeMap::new();
        raw.insert(schema.slot(0).clone(), vec!["west".into(), "east".into(), "dont care".into()]);
        raw.insert(schema.slot(1).clone(), vec!["1".into()]);
        (schema, Ontology::new(raw))
    }

    #[test]
    fn class_order_is_fixed() {
        let (schema, ontology) = setup();
        let lists = class_lists(&schema, &ontology);
        assert_eq!(
            lists[0],
            vec![None, Some("dontcare".into()), Some("east".into()), Some("west".into())]
        );
        assert_eq!(lists[1].len(), 3);
    }

    #[test]
    fn zero_weights_uniform() {
        let (schema, ontology) = setup();
        let mut head = JstHead::new(3, &schema, class_lists(&schema, &ontology), &mut Initializer::new(1)).unwrap();
        for p in head.params_mut() {
            p.value.fill(0.0);
        }
        let p = head.probs(&[0.3, -1.0, 2.0], 0).unwrap();
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        assert!(matches!(head.probs(&[0.0; 3], 2), Err(Error::UnknownSlot(_))));
    }

    #[test]
    fn decode_and_ties() {
        let classes = vec![None, Some("dontcare".into()), Some("east".into())];
        assert_eq!(jst_decode(&[1.0, 0.0, 0.0], &classes), None);
        assert_eq!(jst_decode(&[0.0, 0.0, 1.0], &classes), Some("east".into()));
        assert_eq!(jst_decode(&[0.4, 0.4, 0.2], &classes), None);
        assert_eq!(jst_decode(&[0.2, 0.4, 0.4], &classes), Some("dontcare".into()));
    }

    #[test]
    fn class_index_normalizes() {
        let (schema, ontology) = setup();
        let head = JstHead::new(3, &schema, class_lists(&schema, &ontology), &mut Initializer::new(1)).unwrap();
        assert_eq!(head.class_index(0, Some("don't care")).unwrap(), Some(1));
        assert_eq!(head.class_index(0, Some("East")).unwrap(), Some(2));
        assert_eq!(head.class_index(0, Some("north")).unwrap(), None);
        assert_eq!(head.class_index(0, None).unwrap(), Some(0));
    }
}
