//! JSON form of a causal set:
//! `{d, n_pre, events: [{id, parents, layer?}], links: [{src, dst, p}]}`.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{EnergeticCausalSet, EventId};
use crate::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EventRecord {
    id: usize,
    parents: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    layer: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkRecord {
    src: usize,
    dst: usize,
    p: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EcsFile {
    d: usize,
    n_pre: usize,
    events: Vec<EventRecord>,
    links: Vec<LinkRecord>,
}

impl EnergeticCausalSet {
    fn to_file(&self) -> EcsFile {
        EcsFile {
            d: self.d,
            n_pre: self.n_pre,
            events: self
                .nodes
                .iter()
                .enumerate()
                .map(|(id, n)| EventRecord { id, parents: n.parents.iter().map(|p| p.0).collect(), layer: n.layer })
                .collect(),
            links: self
                .links
                .iter()
                .map(|l| LinkRecord { src: l.source.0, dst: l.target.0, p: l.momentum.clone() })
                .collect(),
        }
    }

    fn from_file(file: EcsFile) -> Result<Self> {
        let mut ecs = Self::new(file.d, file.n_pre)?;
        let mut events = file.events;
        events.sort_by_key(|e| e.id);
        for (expect, e) in events.iter().enumerate() {
            if e.id != expect {
                return Err(Error::MalformedHistory(format!("event ids must be 0..N-1, found {}", e.id)));
            }
            let id = ecs.add_event();
            ecs.nodes[id.0].layer = e.layer;
        }
        for l in file.links {
            if l.src >= ecs.len() || l.dst >= ecs.len() {
                return Err(Error::UnknownEvent(EventId(l.src.max(l.dst))));
            }
            if l.src == l.dst {
                return Err(Error::MalformedHistory(format!("self-link at #{}", l.src)));
            }
            ecs.push_link(EventId(l.src), EventId(l.dst), l.p)?;
        }
        for e in &events {
            let listed: BTreeSet<usize> = e.parents.iter().copied().collect();
            let actual: BTreeSet<usize> = ecs.nodes[e.id].parents.iter().map(|p| p.0).collect();
            if listed != actual || listed.len() != e.parents.len() {
                return Err(Error::MalformedHistory(format!(
                    "parents of #{} disagree with the link list",
                    e.id
                )));
            }
        }
        ecs.topological_order()?;
        Ok(ecs)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_file())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(text)?)
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer(writer, &self.to_file())?;
        Ok(())
    }

    pub fn read_json<R: Read>(reader: R) -> Result<Self> {
        Self::from_file(serde_json::from_reader(reader)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecs::{generate_layered, LayeredConfig};
    use proptest::prelude::*;

    #[test]
    fn parses_the_documented_shape() {
        let text = r#"{"d":1,"n_pre":1,"events":[{"id":0,"parents":[]},{"id":1,"parents":[0]}],
                       "links":[{"src":0,"dst":1,"p":[2.5]}]}"#;
        let ecs = EnergeticCausalSet::from_json(text).unwrap();
        assert_eq!(ecs.link(EventId(0), EventId(1)).unwrap().momentum, vec![2.5]);
    }

    #[test]
    fn rejects_cycles_and_inconsistent_parents() {
        let cyclic = r#"{"d":1,"n_pre":1,"events":[{"id":0,"parents":[1]},{"id":1,"parents":[0]}],
                         "links":[{"src":0,"dst":1,"p":[1]},{"src":1,"dst":0,"p":[1]}]}"#;
        assert!(matches!(EnergeticCausalSet::from_json(cyclic), Err(Error::MalformedHistory(_))));
        let wrong = r#"{"d":1,"n_pre":1,"events":[{"id":0,"parents":[]},{"id":1,"parents":[]}],
                        "links":[{"src":0,"dst":1,"p":[1]}]}"#;
        assert!(matches!(EnergeticCausalSet::from_json(wrong), Err(Error::MalformedHistory(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn json_round_trip_is_lossless(seed in 0u64..1000, d in 1usize..4, layers in 2usize..6, epl in 2usize..6) {
            let cfg = LayeredConfig { d, layers, events_per_layer: epl, n_pre: 2, seed, ..Default::default() };
            let ecs = generate_layered(&cfg).unwrap();
            let text = ecs.to_json().unwrap();
            let back = EnergeticCausalSet::from_json(&text).unwrap();
            prop_assert_eq!(back.links(), ecs.links());
            prop_assert_eq!(back.to_json().unwrap(), text);
        }
    }
}
