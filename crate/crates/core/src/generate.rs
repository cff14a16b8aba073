//! Text generation from a trained model.
//!
//! A candidate text is a schema plus one fragment per placeholder. Its
//! appropriation weight is the minimum of the schema's selection weight and
//! every chosen fragment's selection weight, each clamped to `[0, 1]`.
//! Generation returns the candidate with the largest appropriation weight.
//!
//! Search is best-first over partial candidates keyed by their minimum so
//! far. Fixing another component can only lower that minimum, so the first
//! complete candidate taken from the queue is optimal. Equal weights are
//! resolved by schema training order, then fragment training order.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};

use serde::Serialize;
use thiserror::Error;

use crate::corpus::FeatureCollection;
use crate::model::Model;
use crate::schema::{fill, SchemaElement, SchemaEntry, SlotKey};

#[derive(Debug, Error)]
pub enum GenError {
    #[error("the model has no selectable schema")]
    NoSchema,
    #[error("best candidate weight {:.6} is below the threshold {threshold}", best.candidate.weight)]
    BelowThreshold { best: Box<GenResult>, threshold: f64 },
    #[error("no candidate can be completed; placeholder {0} has no fragments")]
    NoFragmentCandidate(SlotKey),
    #[error("the query has no features")]
    EmptyQuery,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenQuery {
    pub cc: FeatureCollection,
    /// Results weighing less are rejected.
    pub min_weight: f64,
    /// Keep only the best `beam` schemata, and the best `beam` fragments per
    /// placeholder. `None` searches everything.
    pub beam: Option<usize>,
    /// Only schemata whose attributes all occur in the query.
    pub strict: bool,
    /// Best schema, then the best fragment for each placeholder, no backtracking.
    pub greedy: bool,
    /// Replace a single-attribute fragment whose feature disagrees with the
    /// query by the query's value, underscores read as spaces.
    pub copy_values: bool,
}

impl GenQuery {
    pub fn new(cc: FeatureCollection) -> Self {
        GenQuery { cc, min_weight: 0.0, beam: None, strict: false, greedy: false, copy_values: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Candidate {
    /// Schema id.
    pub schema: usize,
    /// Position of the schema among the schema selector's items.
    pub schema_index: usize,
    /// Per placeholder, the chosen item of that placeholder's selector.
    pub choices: Vec<usize>,
    pub fragments: Vec<String>,
    /// Appropriation weight.
    pub weight: f64,
    /// Unclamped selection weights.
    pub schema_weight: f64,
    pub fragment_weights: Vec<f64>,
}

/// One computed selection weight.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceEntry {
    /// `"schema"` or the placeholder key.
    pub selector: String,
    pub index: usize,
    /// Schema id or fragment text.
    pub item: String,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GenResult {
    pub text: String,
    pub candidate: Candidate,
    pub trace: Vec<TraceEntry>,
}

/// Minimum of the clamped component weights.
pub fn appropriation_weight(components: &[f64]) -> f64 {
    components.iter().map(|w| w.clamp(0.0, 1.0)).fold(1.0, f64::min)
}

pub fn generate(model: &Model, query: &GenQuery) -> Result<GenResult, GenError> {
    let mut results = generate_k(model, query, 1)?;
    Ok(results.remove(0))
}

/// The `k` best distinct texts, best first.
pub fn generate_k(model: &Model, query: &GenQuery, k: usize) -> Result<Vec<GenResult>, GenError> {
    if query.cc.is_empty() {
        return Err(GenError::EmptyQuery);
    }
    let mut search = Search::new(model, query);
    if search.roots.is_empty() {
        return Err(GenError::NoSchema);
    }
    let found = if query.greedy { search.greedy().into_iter().collect() } else { search.best_first(k.max(1)) };
    let trace = std::mem::take(&mut search.trace);
    let mut results: Vec<GenResult> = found
        .into_iter()
        .map(|candidate| GenResult { text: search.realize(&candidate), candidate, trace: trace.clone() })
        .collect();
    if results.is_empty() {
        return Err(search.dead_end.map_or(GenError::NoSchema, GenError::NoFragmentCandidate));
    }
    if results[0].candidate.weight < query.min_weight {
        return Err(GenError::BelowThreshold { best: Box::new(results.swap_remove(0)), threshold: query.min_weight });
    }
    results.retain(|r| r.candidate.weight >= query.min_weight);
    Ok(results)
}

/// A partial candidate. The heap pops the largest bound first and, among
/// equal bounds, the smallest (schema, choices) key; a prefix precedes its
/// extensions.
#[derive(Debug)]
struct Node {
    bound: f64,
    schema: usize,
    choices: Vec<usize>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound.total_cmp(&other.bound).then_with(|| (other.schema, &other.choices).cmp(&(self.schema, &self.choices)))
    }
}

struct Root<'m> {
    entry: &'m SchemaEntry,
    slots: Vec<SlotKey>,
    raw: f64,
}

struct Search<'m> {
    model: &'m Model,
    query: &'m GenQuery,
    /// Indexed by schema selector item; `None` for filtered schemata.
    roots: Vec<Option<Root<'m>>>,
    /// Ranked (item, raw weight) options per placeholder; `None` when the placeholder has no selector.
    options: HashMap<SlotKey, Option<Vec<(usize, f64)>>>,
    trace: Vec<TraceEntry>,
    dead_end: Option<SlotKey>,
}

impl<'m> Search<'m> {
    fn new(model: &'m Model, query: &'m GenQuery) -> Self {
        let selector = &model.selectors.schema;
        let (k, _) = selector.encode(&query.cc);
        let weights = selector.weights(&k);
        let mut trace = Vec::with_capacity(weights.len());
        let query_attrs = query.cc.attributes();
        let mut roots: Vec<Option<Root>> = selector
            .items()
            .iter()
            .zip(&weights)
            .enumerate()
            .map(|(index, (&id, &raw))| {
                trace.push(TraceEntry { selector: "schema".into(), index, item: id.to_string(), weight: raw });
                let entry = model.schema(id)?;
                if query.strict && !entry.elements.attributes().is_subset(&query_attrs) {
                    return None;
                }
                let slots =
                    entry.elements.placeholder_positions().into_iter().map(|position| SlotKey { schema: id, position }).collect();
                Some(Root { entry, slots, raw })
            })
            .collect();
        if let Some(beam) = query.beam {
            let mut ranked: Vec<usize> = (0..roots.len()).filter(|&i| roots[i].is_some()).collect();
            ranked.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
            for &i in ranked.iter().skip(beam) {
                roots[i] = None;
            }
        }
        if roots.iter().all(Option::is_none) {
            roots.clear();
        }
        Search { model, query, roots, options: HashMap::new(), trace, dead_end: None }
    }

    /// Options of a placeholder, computed (and traced) on first use.
    fn options(&mut self, key: SlotKey) -> Option<&[(usize, f64)]> {
        if !self.options.contains_key(&key) {
            let ranked = self.model.selectors.fragments.get(&key).map(|selector| {
                let (k, _) = selector.encode(&self.query.cc);
                let weights = selector.weights(&k);
                for (index, (item, &weight)) in selector.items().iter().zip(&weights).enumerate() {
                    self.trace.push(TraceEntry { selector: key.to_string(), index, item: item.text.clone(), weight });
                }
                let mut ranked: Vec<(usize, f64)> = weights.into_iter().enumerate().collect();
                ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                if let Some(beam) = self.query.beam {
                    ranked.truncate(beam);
                }
                ranked
            });
            self.options.insert(key, ranked.filter(|r| !r.is_empty()));
        }
        let found = self.options[&key].as_deref();
        if found.is_none() {
            self.dead_end.get_or_insert(key);
        }
        found
    }

    fn best_first(&mut self, k: usize) -> Vec<Candidate> {
        let mut heap: BinaryHeap<Node> = self
            .roots
            .iter()
            .enumerate()
            .filter_map(|(schema, root)| {
                root.as_ref().map(|r| Node { bound: r.raw.clamp(0.0, 1.0), schema, choices: Vec::new() })
            })
            .collect();
        let mut found = Vec::new();
        let mut texts = HashSet::new();
        while let Some(node) = heap.pop() {
            let slots = &self.roots[node.schema].as_ref().expect("only live roots are queued").slots;
            if node.choices.len() == slots.len() {
                let candidate = self.candidate(node.schema, node.choices);
                debug_assert_eq!(candidate.weight, node.bound);
                if texts.insert(self.realize(&candidate)) {
                    found.push(candidate);
                    if found.len() == k {
                        break;
                    }
                }
                continue;
            }
            let key = slots[node.choices.len()];
            let Some(options) = self.options(key) else { continue };
            for &(item, raw) in options {
                let bound = node.bound.min(raw.clamp(0.0, 1.0));
                debug_assert!(bound <= node.bound, "bound increased");
                let mut choices = node.choices.clone();
                choices.push(item);
                heap.push(Node { bound, schema: node.schema, choices });
            }
        }
        found
    }

    fn greedy(&mut self) -> Option<Candidate> {
        let (schema, _) = self
            .roots
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.as_ref().map(|r| (i, r.raw)))
            .min_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)))?;
        let slots = self.roots[schema].as_ref().expect("live root").slots.clone();
        let mut choices = Vec::with_capacity(slots.len());
        for key in slots {
            choices.push(self.options(key)?[0].0);
        }
        Some(self.candidate(schema, choices))
    }

    fn candidate(&self, schema_index: usize, choices: Vec<usize>) -> Candidate {
        let root = self.roots[schema_index].as_ref().expect("live root");
        let mut fragments = Vec::with_capacity(choices.len());
        let mut fragment_weights = Vec::with_capacity(choices.len());
        for (key, &item) in root.slots.iter().zip(&choices) {
            fragments.push(self.model.selectors.fragments[key].items()[item].text.clone());
            let weight = self.options[key].as_ref().and_then(|o| o.iter().find(|(i, _)| *i == item)).expect("scored").1;
            fragment_weights.push(weight);
        }
        let mut components = vec![root.raw];
        components.extend(&fragment_weights);
        Candidate {
            schema: root.entry.id,
            schema_index,
            choices,
            fragments,
            weight: appropriation_weight(&components),
            schema_weight: root.raw,
            fragment_weights,
        }
    }

    fn realize(&self, candidate: &Candidate) -> String {
        let root = self.roots[candidate.schema_index].as_ref().expect("live root");
        let mut surfaces = candidate.fragments.clone();
        if self.query.copy_values {
            for ((key, &item), surface) in root.slots.iter().zip(&candidate.choices).zip(surfaces.iter_mut()) {
                let record = &self.model.selectors.fragments[key].items()[item];
                if let Some(value) = copied_value(&root.entry.elements.elements[key.position], &record.cc, &self.query.cc) {
                    *surface = value;
                }
            }
        }
        fill(&root.entry.elements, &surfaces).expect("one fragment per placeholder")
    }
}

/// The query value to insert instead of a fragment, if the placeholder has a
/// single attribute and the fragment expresses a different value for it.
fn copied_value(element: &SchemaElement, fragment: &FeatureCollection, query: &FeatureCollection) -> Option<String> {
    let SchemaElement::Placeholder(placeholder) = element else { return None };
    let [attribute] = placeholder.attributes() else { return None };
    let wanted = query.iter().find(|f| f.attribute() == attribute)?;
    if fragment.contains(wanted) {
        return None;
    }
    Some(wanted.value().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::AlignConfig;
    use crate::model::train_corpus;
    use crate::schema::{FragmentRecord, Placeholder, Schema};
    use crate::stats::tests::{c4, random_corpus};
    use indexmap::IndexMap;
    use proptest::prelude::*;

    fn cc(list: &str) -> FeatureCollection {
        FeatureCollection::parse_list(list).unwrap()
    }

    fn c4_model() -> Model {
        train_corpus(&c4(), &AlignConfig::default()).unwrap().model
    }

    /// Every complete candidate with its appropriation weight, best first,
    /// by plain enumeration of the cartesian product.
    fn enumerate(model: &Model, query: &FeatureCollection) -> Vec<(f64, String, usize, Vec<usize>)> {
        let schema_selector = &model.selectors.schema;
        let schema_weights = schema_selector.weights(&schema_selector.encode(query).0);
        let mut all = Vec::new();
        for (si, &id) in schema_selector.items().iter().enumerate() {
            let entry = model.schema(id).unwrap();
            let slots: Vec<SlotKey> =
                entry.elements.placeholder_positions().into_iter().map(|p| SlotKey { schema: id, position: p }).collect();
            let mut partial: Vec<(Vec<usize>, Vec<f64>)> = vec![(vec![], vec![schema_weights[si]])];
            for key in &slots {
                let Some(sel) = model.selectors.fragments.get(key) else {
                    partial.clear();
                    break;
                };
                let w = sel.weights(&sel.encode(query).0);
                partial = partial
                    .into_iter()
                    .flat_map(|(c, ws)| {
                        w.iter().enumerate().map(move |(i, &wi)| {
                            let mut c = c.clone();
                            c.push(i);
                            let mut ws = ws.clone();
                            ws.push(wi);
                            (c, ws)
                        })
                    })
                    .collect();
            }
            for (choices, ws) in partial {
                let p = ws.iter().map(|w| w.clamp(0.0, 1.0)).fold(f64::INFINITY, f64::min);
                let texts: Vec<String> =
                    slots.iter().zip(&choices).map(|(k, &i)| model.selectors.fragments[k].items()[i].text.clone()).collect();
                all.push((p, fill(&entry.elements, &texts).unwrap(), si, choices));
            }
        }
        all.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.2, &a.3).cmp(&(b.2, &b.3))));
        all
    }

    #[test]
    fn appropriation_weight_is_clamped_min() {
        assert_eq!(appropriation_weight(&[0.9, 0.8, 1.0]), 0.8);
        assert_eq!(appropriation_weight(&[0.9, 0.0, 1.0]), 0.0);
        assert_eq!(appropriation_weight(&[0.7]), 0.7);
        assert_eq!(appropriation_weight(&[1.3]), 1.0);
        assert_eq!(appropriation_weight(&[0.4, -0.2]), 0.0);
    }

    #[test]
    fn c4_reproduces_training_texts() {
        let model = c4_model();
        for instance in c4().instances() {
            let result = generate(&model, &GenQuery::new(instance.cc.clone())).unwrap();
            assert_eq!(result.text, instance.joined(), "{}", instance.id);
            assert!((result.candidate.weight - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn c4_queries_match_enumeration() {
        let model = c4_model();
        for query in [
            "name=sushi_bar,price=cheap",
            "name=red_door_cafe,food=sushi",
            "name=blue_door_cafe,food=sushi",
            "name=red_door_cafe,price=cheap",
            "price=cheap",
            "food=sushi,area=north",
        ] {
            let q = cc(query);
            let best = &enumerate(&model, &q)[0];
            let result = generate(&model, &GenQuery::new(q)).unwrap();
            assert_eq!(result.text, best.1, "{query}");
            assert!((result.candidate.weight - best.0).abs() <= 1e-12, "{query}");
            assert_eq!((result.candidate.schema_index, &result.candidate.choices), (best.2, &best.3));
        }
        let q = GenQuery::new(cc("name=sushi_bar,price=cheap"));
        assert_eq!(generate(&model, &q).unwrap().text, "sushi bar is cheap .");
    }

    #[test]
    fn threshold_rejects_weak_candidates() {
        let model = c4_model();
        let mut q = GenQuery::new(cc("name=blue_door_cafe,food=sushi"));
        let best = generate(&model, &q).unwrap();
        // no C4 text pairs blue door cafe with sushi; the best reuses i2 at 2/3
        assert_eq!(best.text, "blue door cafe is cheap .");
        assert!((best.candidate.weight - 2.0 / 3.0).abs() < 1e-9);
        q.min_weight = 0.9;
        match generate(&model, &q) {
            Err(GenError::BelowThreshold { best: inner, .. }) => assert_eq!(*inner, best),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn k_best_are_distinct_and_sorted() {
        let model = c4_model();
        let q = GenQuery::new(cc("name=red_door_cafe,price=cheap"));
        let results = generate_k(&model, &q, 2).unwrap();
        assert_eq!(results.len(), 2);
        assert_eq!(results[0].text, "red door cafe is cheap .");
        assert!(results[0].candidate.weight >= results[1].candidate.weight);
        assert_ne!(results[0].text, results[1].text);
        assert_eq!(generate_k(&model, &q, 1).unwrap()[0], generate(&model, &q).unwrap());

        let everything = generate_k(&model, &q, 1000).unwrap();
        let mut distinct: Vec<String> = enumerate(&model, &q.cc).into_iter().map(|c| c.1).collect();
        distinct.sort();
        distinct.dedup();
        assert_eq!(everything.len(), distinct.len());
        assert!(everything.windows(2).all(|w| w[0].candidate.weight >= w[1].candidate.weight));
    }

    #[test]
    fn trace_lists_every_computed_weight() {
        let model = c4_model();
        let result = generate(&model, &GenQuery::new(cc("name=sushi_bar,price=cheap"))).unwrap();
        let schema_entries = result.trace.iter().filter(|t| t.selector == "schema").count();
        assert_eq!(schema_entries, model.selectors.schema.items().len());
        let mut seen = HashSet::new();
        assert!(result.trace.iter().all(|t| seen.insert((t.selector.clone(), t.index))));
        // the chosen fragment's weight is in the trace
        let slot = SlotKey { schema: result.candidate.schema, position: 0 };
        assert!(result.trace.iter().any(|t| t.selector == slot.to_string() && t.item == result.candidate.fragments[0]));
    }

    #[test]
    fn strict_mode_filters_schemata() {
        let model = c4_model();
        let mut q = GenQuery::new(cc("price=cheap"));
        q.strict = true;
        // every C4 schema needs a name
        assert!(matches!(generate(&model, &q), Err(GenError::NoSchema)));
        let mut q = GenQuery::new(cc("name=red_door_cafe,food=sushi"));
        q.strict = true;
        let result = generate(&model, &q).unwrap();
        assert!(model.schema(result.candidate.schema).unwrap().elements.attributes().iter().all(|a| *a != "price"));
    }

    #[test]
    fn greedy_and_beam() {
        let model = c4_model();
        let mut q = GenQuery::new(cc("name=sushi_bar,price=cheap"));
        q.greedy = true;
        assert_eq!(generate(&model, &q).unwrap().text, "sushi bar is cheap .");
        q.greedy = false;
        q.beam = Some(1);
        assert_eq!(generate(&model, &q).unwrap().text, "sushi bar is cheap .");
    }

    #[test]
    fn copy_values_replaces_mismatched_fragments() {
        let model = c4_model();
        let mut q = GenQuery::new(cc("name=green_door_cafe,price=cheap"));
        q.strict = true;
        q.copy_values = true;
        let result = generate(&model, &q).unwrap();
        if result.candidate.schema == 0 {
            assert!(result.text.starts_with("green_door_cafe "), "{}", result.text);
        }
        // copying changes surfaces, never weights
        q.copy_values = false;
        assert_eq!(generate(&model, &q).unwrap().candidate, result.candidate);
    }

    #[test]
    fn errors() {
        let model = c4_model();
        assert!(matches!(generate(&model, &GenQuery::new(FeatureCollection::new())), Err(GenError::EmptyQuery)));

        // a schema whose placeholder lost its fragments can never be completed
        let schema = Schema::new(vec![SchemaElement::Placeholder(Placeholder::new(["name"]).unwrap())]);
        let entry = SchemaEntry { id: 0, elements: schema, ccs: vec![cc("name=x")] };
        let orphan = Model::train(vec![entry], IndexMap::new()).unwrap();
        match generate(&orphan, &GenQuery::new(cc("name=x"))) {
            Err(GenError::NoFragmentCandidate(key)) => assert_eq!(key, SlotKey { schema: 0, position: 0 }),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn literal_only_schema() {
        let schema = Schema::new(vec![SchemaElement::Literal("good morning .".into())]);
        let entry = SchemaEntry { id: 7, elements: schema, ccs: vec![cc("time=am")] };
        let mut fragments = IndexMap::new();
        fragments.insert(SlotKey { schema: 9, position: 0 }, vec![FragmentRecord { text: "x".into(), cc: cc("a=b") }]);
        let model = Model::train(vec![entry], fragments).unwrap();
        let result = generate(&model, &GenQuery::new(cc("time=am"))).unwrap();
        assert_eq!(result.text, "good morning .");
        assert_eq!(result.candidate.weight, 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn best_first_equals_enumeration(corpus in random_corpus(), pick in any::<prop::sample::Index>()) {
            let Ok(trained) = train_corpus(&corpus, &AlignConfig::default()) else { return Ok(()) };
            let model = trained.model;
            let query = corpus.instances()[pick.index(corpus.len())].cc.clone();
            prop_assume!(!query.is_empty());
            let all = enumerate(&model, &query);
            prop_assume!(all.len() <= 10_000);
            match generate(&model, &GenQuery::new(query.clone())) {
                Ok(result) => {
                    let best = &all[0];
                    prop_assert!((result.candidate.weight - best.0).abs() <= 1e-12);
                    prop_assert_eq!(&result.text, &best.1);
                    prop_assert_eq!((result.candidate.schema_index, &result.candidate.choices), (best.2, &best.3));
                }
                Err(e) => prop_assert!(all.is_empty(), "{e}"),
            }
        }
    }
}
