//! Reference lifecycle model for a single object observed on a scripted
//! hit/miss pattern.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum State {
    Candidate,
    Active,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Track {
    pub id: u32,
    pub state: State,
    pub streak: u32,
    pub misses: u32,
}

#[derive(Debug, Clone, Copy)]
pub struct Rules {
    pub min_hits: u32,
    pub max_age: u32,
    pub death_age: u32,
}

pub struct Model {
    rules: Rules,
    next_id: u32,
    pub track: Option<Track>,
}

impl Model {
    pub fn new(rules: Rules) -> Self {
        Model { rules, next_id: 1, track: None }
    }

    pub fn step(&mut self, hit: bool) {
        let r = self.rules;
        let Some(mut t) = self.track else {
            if hit {
                let id = self.next_id;
                self.next_id += 1;
                let state = if r.min_hits <= 1 { State::Active } else { State::Candidate };
                self.track = Some(Track { id, state, streak: 1, misses: 0 });
            }
            return;
        };
        if hit {
            t.streak += 1;
            t.misses = 0;
        } else {
            t.streak = 0;
            t.misses += 1;
        }
        match t.state {
            State::Active if t.misses > r.max_age => {
                t.state = State::Candidate;
                t.streak = 0;
            }
            State::Active => {}
            State::Candidate if hit && t.streak >= r.min_hits => t.state = State::Active,
            State::Candidate if t.misses > r.death_age => {
                self.track = None;
                return;
            }
            State::Candidate => {}
        }
        self.track = Some(t);
    }
}
