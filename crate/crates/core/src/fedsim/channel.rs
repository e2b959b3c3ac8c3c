//! In-process stand-in for the client/server network.
//!
//! Only types implementing [`Payload`] can cross the channel, and the only
//! implementation is [`ParamSet`]; datasets therefore cannot leave a client
//! by construction. Every transfer and aggregation is logged so tests can
//! check what crossed and when.

use crate::params::ParamSet;
use crate::tensor::Scalar;

/// Something a client and the server may exchange.
pub trait Payload: Clone {
    fn kind(&self) -> &'static str;
}

impl<T: Scalar> Payload for ParamSet<T> {
    fn kind(&self) -> &'static str {
        "params"
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Broadcast,
    Upload,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Event {
    Transfer {
        round: usize,
        client: usize,
        direction: Direction,
        payload: &'static str,
    },
    Aggregate {
        round: usize,
        uploads: usize,
    },
}

#[derive(Clone, Debug, Default)]
pub struct Channel {
    log: Vec<Event>,
}

impl Channel {
    pub fn new() -> Self {
        Self::default()
    }

    /// Server -> client copy.
    pub fn broadcast<P: Payload>(&mut self, round: usize, client: usize, payload: &P) -> P {
        self.record(round, client, Direction::Broadcast, payload)
    }

    /// Client -> server copy.
    pub fn upload<P: Payload>(&mut self, round: usize, client: usize, payload: &P) -> P {
        self.record(round, client, Direction::Upload, payload)
    }

    pub(crate) fn note_aggregate(&mut self, round: usize, uploads: usize) {
        self.log.push(Event::Aggregate { round, uploads });
    }

    fn record<P: Payload>(&mut self, round: usize, client: usize, direction: Direction, payload: &P) -> P {
        self.log.push(Event::Transfer {
            round,
            client,
            direction,
            payload: payload.kind(),
        });
        payload.clone()
    }

    pub fn events(&self) -> &[Event] {
        &self.log
    }
}
