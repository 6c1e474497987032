use crate::error::{Error, Result};
use crate::netcore::ChannelStack;

/// One conditioning input: image channels plus the metadata slots that
/// describe it.
#[derive(Clone, Debug, PartialEq)]
pub struct Condition {
    pub name: String,
    pub stack: ChannelStack,
    pub present: bool,
    pub meta_slots: Vec<usize>,
}

/// Everything a vector field sees besides the state. Absent conditions keep
/// their place in the channel layout but read as zeros, and so do their
/// metadata slots.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConditionSet {
    conditions: Vec<Condition>,
    meta: Vec<f64>,
}

impl ConditionSet {
    pub fn new(meta: Vec<f64>) -> Self {
        ConditionSet {
            conditions: Vec::new(),
            meta,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.conditions.is_empty()
    }

    pub fn conditions(&self) -> &[Condition] {
        &self.conditions
    }

    /// Adds a condition. Slots must index the metadata vector and must not be
    /// claimed by an earlier condition.
    pub fn push(&mut self, name: impl Into<String>, stack: ChannelStack, meta_slots: &[usize]) -> Result<()> {
        if let Some(first) = self.conditions.first() {
            if (first.stack.height, first.stack.width) != (stack.height, stack.width) {
                return Err(Error::Shape(format!(
                    "condition is {}x{}, set is {}x{}",
                    stack.height, stack.width, first.stack.height, first.stack.width
                )));
            }
        }
        for &s in meta_slots {
            if s >= self.meta.len() {
                return Err(Error::InvalidArgument(format!("meta slot {s} outside {}", self.meta.len())));
            }
            if self.conditions.iter().any(|c| c.meta_slots.contains(&s)) {
                return Err(Error::InvalidArgument(format!("meta slot {s} claimed twice")));
            }
        }
        self.conditions.push(Condition {
            name: name.into(),
            stack,
            present: true,
            meta_slots: meta_slots.to_vec(),
        });
        Ok(())
    }

    /// Marks a condition absent (or present again); unknown names are an error.
    pub fn set_present(&mut self, name: &str, present: bool) -> Result<()> {
        let c = self
            .conditions
            .iter_mut()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::InvalidArgument(format!("no condition named `{name}`")))?;
        c.present = present;
        Ok(())
    }

    pub fn with_present(mut self, name: &str, present: bool) -> Result<Self> {
        self.set_present(name, present)?;
        Ok(self)
    }

    pub fn is_present(&self, name: &str) -> Option<bool> {
        self.conditions.iter().find(|c| c.name == name).map(|c| c.present)
    }

    pub fn channel_count(&self) -> usize {
        self.conditions.iter().map(|c| c.stack.channels).sum()
    }

    pub fn spatial_shape(&self) -> Result<(usize, usize)> {
        self.conditions
            .first()
            .map(|c| (c.stack.height, c.stack.width))
            .ok_or_else(|| Error::Shape("condition set has no images".into()))
    }

    /// All condition channels in insertion order, zeros for absent ones.
    pub fn channels(&self) -> Result<ChannelStack> {
        let zeroed: Vec<ChannelStack> = self
            .conditions
            .iter()
            .map(|c| {
                if c.present {
                    c.stack.clone()
                } else {
                    ChannelStack::zeros(c.stack.channels, c.stack.height, c.stack.width)
                }
            })
            .collect();
        ChannelStack::concat(&zeroed.iter().collect::<Vec<_>>())
    }

    /// The metadata vector with the slots of absent conditions zeroed.
    pub fn meta(&self) -> Vec<f64> {
        let mut m = self.meta.clone();
        for c in self.conditions.iter().filter(|c| !c.present) {
            for &s in &c.meta_slots {
                m[s] = 0.0;
            }
        }
        m
    }

    pub fn meta_len(&self) -> usize {
        self.meta.len()
    }
}
