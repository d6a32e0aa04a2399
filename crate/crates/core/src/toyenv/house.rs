use super::{Goal, Layout, Phase, Transition};

pub(super) fn observe(layout: &Layout, phase: &Phase) -> String {
    let Phase::House { room, holding } = phase else {
        unreachable!("not a binaryhouse phase")
    };
    let held = holding.as_deref().unwrap_or("nothing");
    match room {
        None => {
            let exits: Vec<&str> = layout.rooms.iter().map(|r| r.name.as_str()).collect();
            format!(
                "You are in the hallway. Exits: {}. You are holding {held}.",
                exits.join(", ")
            )
        }
        Some(r) => {
            let room = &layout.rooms[*r];
            let visible: Vec<&str> = room
                .objects
                .iter()
                .map(String::as_str)
                .filter(|o| Some(*o) != holding.as_deref())
                .collect();
            let seen = if visible.is_empty() {
                "nothing".to_string()
            } else {
                visible.join(", ")
            };
            format!(
                "You are in the {}. You see: {seen}. You are holding {held}.",
                room.name
            )
        }
    }
}

pub(super) fn actions(layout: &Layout, phase: &Phase) -> Vec<String> {
    let Phase::House { room, holding } = phase else {
        unreachable!("not a binaryhouse phase")
    };
    match room {
        None => layout
            .rooms
            .iter()
            .map(|r| format!("go to {}", r.name))
            .collect(),
        Some(r) => {
            let mut out = vec!["go to hallway".to_string()];
            match holding {
                Some(h) => out.push(format!("put {h}")),
                None => out.extend(layout.rooms[*r].objects.iter().map(|o| format!("take {o}"))),
            }
            out
        }
    }
}

/// `action` has already been checked against [`actions`].
pub(super) fn apply(layout: &Layout, goal: &Goal, phase: &Phase, action: &str) -> Transition {
    let Phase::House { room, holding } = phase else {
        unreachable!("not a binaryhouse phase")
    };
    let next = |phase: Phase| Transition {
        observation: observe(layout, &phase),
        phase,
        score: None,
    };
    if let Some(target) = action.strip_prefix("go to ") {
        let room = layout.rooms.iter().position(|r| r.name == target);
        return next(Phase::House {
            room,
            holding: holding.clone(),
        });
    }
    if let Some(object) = action.strip_prefix("take ") {
        return next(Phase::House {
            room: *room,
            holding: Some(object.to_string()),
        });
    }
    let object = action.strip_prefix("put ").expect("validated put action");
    let here = &layout.rooms[room.expect("put happens in a room")].name;
    let Goal::Deliver {
        object: want,
        room: target,
    } = goal
    else {
        unreachable!("binaryhouse goals are deliveries")
    };
    let success = object == want && here == target;
    Transition {
        phase: Phase::Done,
        observation: format!("You put the {object} in the {here}."),
        score: Some(if success { 1.0 } else { 0.0 }),
    }
}
