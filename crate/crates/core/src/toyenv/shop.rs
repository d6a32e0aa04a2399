use super::{Catalog, Goal, Phase, Transition};

pub(super) fn observe(catalog: &Catalog, phase: &Phase) -> String {
    match phase {
        Phase::Search => "Search box: empty. Results: none.".to_string(),
        Phase::Results { query } => {
            let names: Vec<&str> = results(catalog, query)
                .map(|i| catalog.items[i].name.as_str())
                .collect();
            format!("Search box: {query}. Results: {}.", names.join(", "))
        }
        Phase::Item { item, .. } => {
            let it = &catalog.items[*item];
            format!("Item {}: {}.", it.name, it.attributes.join(" "))
        }
        _ => unreachable!("not a lineshop phase"),
    }
}

fn results<'a>(catalog: &'a Catalog, query: &'a str) -> impl Iterator<Item = usize> + 'a {
    catalog
        .items
        .iter()
        .enumerate()
        .filter(move |(_, it)| it.attributes.iter().any(|a| a == query))
        .map(|(i, _)| i)
}

pub(super) fn actions(catalog: &Catalog, phase: &Phase) -> Vec<String> {
    match phase {
        Phase::Search => catalog
            .queries()
            .into_iter()
            .map(|q| format!("search[{q}]"))
            .collect(),
        Phase::Results { query } => results(catalog, query)
            .map(|i| format!("click[{}]", catalog.items[i].name))
            .chain(std::iter::once("back".to_string()))
            .collect(),
        Phase::Item { .. } => vec!["buy".to_string(), "back".to_string()],
        _ => unreachable!("not a lineshop phase"),
    }
}

fn bracketed<'a>(action: &'a str, verb: &str) -> Option<&'a str> {
    action.strip_prefix(verb)?.strip_prefix('[')?.strip_suffix(']')
}

/// `action` has already been checked against [`actions`].
pub(super) fn apply(catalog: &Catalog, goal: &Goal, phase: &Phase, action: &str) -> Transition {
    let next = |phase: Phase| Transition {
        observation: observe(catalog, &phase),
        phase,
        score: None,
    };
    match phase {
        Phase::Search => {
            let query = bracketed(action, "search").expect("validated search action");
            next(Phase::Results {
                query: query.to_string(),
            })
        }
        Phase::Results { query } => match bracketed(action, "click") {
            Some(name) => next(Phase::Item {
                item: catalog
                    .items
                    .iter()
                    .position(|i| i.name == name)
                    .expect("validated click action"),
                query: query.clone(),
            }),
            None => next(Phase::Search),
        },
        Phase::Item { item, query } => {
            if action == "back" {
                return next(Phase::Results {
                    query: query.clone(),
                });
            }
            let it = &catalog.items[*item];
            let Goal::Attributes(wanted) = goal else {
                unreachable!("lineshop goals are attribute lists")
            };
            let matched = wanted.iter().filter(|w| it.attributes.contains(w)).count();
            Transition {
                phase: Phase::Done,
                observation: format!("You bought {}.", it.name),
                score: Some(matched as f64 / wanted.len() as f64),
            }
        }
        _ => unreachable!("not a lineshop phase"),
    }
}
