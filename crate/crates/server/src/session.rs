use arelink::{st_bridges, Areas, Augmented, BridgeOptions, FitSummary, NbError, NbStructure, UnitRef};
use serde::{Deserialize, Serialize};

/// One recorded mutation of the structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Step {
    Join { a: UnitRef, b: UnitRef },
    Cut { a: UnitRef, b: UnitRef },
    Bridges {
        #[serde(default = "one")]
        k: usize,
        #[serde(default)]
        remove_islands: bool,
    },
}

fn one() -> usize {
    1
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error(transparent)]
    Nb(#[from] NbError),
    #[error("nothing to undo")]
    NothingToUndo,
}

/// The single analyst session: input collection, current structure and the
/// edits that led there.
#[derive(Debug, Clone)]
pub struct Session {
    initial: (Areas, NbStructure),
    pub coll: Areas,
    pub nb: NbStructure,
    history: Vec<Step>,
    snapshots: Vec<(Areas, NbStructure)>,
    pub latest_fit: Option<FitSummary>,
    pub latest_aug: Option<Augmented>,
}

impl Session {
    pub fn new(coll: Areas, nb: NbStructure) -> Self {
        Self {
            initial: (coll.clone(), nb.clone()),
            coll,
            nb,
            history: Vec::new(),
            snapshots: Vec::new(),
            latest_fit: None,
            latest_aug: None,
        }
    }

    pub fn history(&self) -> &[Step] {
        &self.history
    }

    fn step(initial: &Areas, coll: &Areas, nb: &NbStructure, step: &Step) -> Result<(Areas, NbStructure), NbError> {
        match step {
            Step::Join { a, b } => Ok((coll.clone(), nb.join(a, b)?)),
            Step::Cut { a, b } => Ok((coll.clone(), nb.cut(a, b)?)),
            Step::Bridges { k, remove_islands } => {
                let opts = BridgeOptions {
                    link_islands_k: *k,
                    remove_islands: *remove_islands,
                    ..Default::default()
                };
                let b = st_bridges(initial, &opts)?;
                Ok((b.areas, b.nb))
            }
        }
    }

    /// Applies `step`; on error nothing changes.
    pub fn apply(&mut self, step: Step) -> Result<(), SessionError> {
        let (coll, nb) = Self::step(&self.initial.0, &self.coll, &self.nb, &step)?;
        let prev_coll = std::mem::replace(&mut self.coll, coll);
        let prev_nb = std::mem::replace(&mut self.nb, nb);
        self.snapshots.push((prev_coll, prev_nb));
        self.history.push(step);
        Ok(())
    }

    pub fn undo(&mut self) -> Result<(), SessionError> {
        let (coll, nb) = self.snapshots.pop().ok_or(SessionError::NothingToUndo)?;
        self.history.pop();
        self.coll = coll;
        self.nb = nb;
        Ok(())
    }

    /// Rebuilds the current state from the initial one by re-running the
    /// history.
    pub fn replay(&self) -> Result<(Areas, NbStructure), NbError> {
        let (mut coll, mut nb) = self.initial.clone();
        for s in &self.history {
            (coll, nb) = Self::step(&self.initial.0, &coll, &nb, s)?;
        }
        Ok((coll, nb))
    }
}
