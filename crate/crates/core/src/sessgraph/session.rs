use crate::error::{invalid, Result};

/// An ordered list of clicked items, optionally with timestamps and the next
/// item to predict.
#[derive(Clone, Debug, PartialEq)]
pub struct Session {
    pub id: String,
    pub items: Vec<usize>,
    pub timestamps: Option<Vec<f64>>,
    pub label: Option<usize>,
}

impl Session {
    pub fn new(items: Vec<usize>) -> Result<Self> {
        let s = Session {
            id: String::new(),
            items,
            timestamps: None,
            label: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_label(items: Vec<usize>, label: usize) -> Result<Self> {
        let mut s = Self::new(items)?;
        s.label = Some(label);
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.items.is_empty() {
            return Err(invalid!("session `{}` has no items", self.id));
        }
        if let Some(ts) = &self.timestamps {
            if ts.len() != self.items.len() {
                return Err(invalid!(
                    "session `{}` has {} items but {} timestamps",
                    self.id,
                    self.items.len(),
                    ts.len()
                ));
            }
            if ts.windows(2).any(|w| w[1] < w[0]) {
                return Err(invalid!("session `{}` timestamps decrease", self.id));
            }
        }
        Ok(())
    }

    pub fn first_timestamp(&self) -> Option<f64> {
        self.timestamps.as_ref().and_then(|t| t.first().copied())
    }

    pub fn last_timestamp(&self) -> Option<f64> {
        self.timestamps.as_ref().and_then(|t| t.last().copied())
    }
}
