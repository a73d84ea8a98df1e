//! Pseudonym (KeyB) lifecycle: silence-period timing, the tolerance-distance
//! test, KeyB exchange between nearby group members, and KeyB regeneration.
//!
//! Time is logical ticks, coordinates are planar meters. Step functions are
//! pure: state in, state out.

use crate::keygen::{Key, KeyRole};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IgsError {
    #[error("silence range invalid: need 0 < min <= max, got [{min}, {max}]")]
    BadSilenceRange { min: u64, max: u64 },
    #[error("tolerance distance must be >= 0")]
    NegativeTolerance,
    #[error("member key must have role KeyB")]
    WrongKeyRole,
}

/// Privacy preferences: the silence period is drawn uniformly from
/// [silence_min, silence_max] ticks at every reset; tolerance_distance is the
/// maximum exchange distance in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IgsConfig {
    pub silence_min: u64,
    pub silence_max: u64,
    pub tolerance_distance: f64,
}

impl IgsConfig {
    pub fn new(silence_min: u64, silence_max: u64, tolerance_distance: f64) -> Result<Self, IgsError> {
        if silence_min == 0 || silence_min > silence_max {
            return Err(IgsError::BadSilenceRange {
                min: silence_min,
                max: silence_max,
            });
        }
        if tolerance_distance < 0.0 {
            return Err(IgsError::NegativeTolerance);
        }
        Ok(IgsConfig {
            silence_min,
            silence_max,
            tolerance_distance,
        })
    }

    pub fn draw_silence_period<R: Rng>(&self, rng: &mut R) -> u64 {
        rng.gen_range(self.silence_min..=self.silence_max)
    }
}

/// Per-member pseudonym state.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberState {
    pub member_ref: String,
    pub key_b: Key,
    pub location: (f64, f64),
    pub timer: u64,
    pub silence_period: u64,
    pub group_id: String,
}

impl MemberState {
    pub fn new(
        member_ref: impl Into<String>,
        key_b: Key,
        location: (f64, f64),
        silence_period: u64,
        group_id: impl Into<String>,
    ) -> Result<Self, IgsError> {
        if key_b.role != KeyRole::KeyB {
            return Err(IgsError::WrongKeyRole);
        }
        Ok(MemberState {
            member_ref: member_ref.into(),
            key_b,
            location,
            timer: 0,
            silence_period,
            group_id: group_id.into(),
        })
    }
}

/// Planar Euclidean distance in meters.
pub fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    let dx = a.0 - b.0;
    let dy = a.1 - b.1;
    (dx * dx + dy * dy).sqrt()
}

/// Advances the member's timer by one tick. Never touches KeyB or location.
pub fn tick(mut state: MemberState) -> MemberState {
    state.timer += 1;
    state
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepEvent {
    None,
    /// KeyBs swapped with the named friend; both timers reset.
    Exchanged { friend: String },
    /// Fresh KeyB issued; timer reset.
    Regenerated,
}

/// One decision point of the pseudonym-change algorithm.
///
/// If the timer has not reached the silence period, nothing happens. Once it
/// has, a friend is picked uniformly at random from `group` (which must not
/// contain the member itself): within tolerance distance the two KeyBs are
/// swapped and both timers reset with fresh silence periods; otherwise (or
/// when the group is empty) the member receives a fresh KeyB from `regen`.
pub fn step<R, F>(
    member: &MemberState,
    group: &[MemberState],
    rng: &mut R,
    cfg: &IgsConfig,
    regen: &mut F,
) -> (MemberState, Option<MemberState>, StepEvent)
where
    R: Rng,
    F: FnMut(&mut R) -> Key,
{
    if member.timer < member.silence_period {
        return (member.clone(), None, StepEvent::None);
    }

    let mut updated = member.clone();
    if !group.is_empty() {
        let friend = &group[rng.gen_range(0..group.len())];
        if distance(member.location, friend.location) <= cfg.tolerance_distance {
            let mut updated_friend = friend.clone();
            std::mem::swap(&mut updated.key_b, &mut updated_friend.key_b);
            updated.timer = 0;
            updated.silence_period = cfg.draw_silence_period(rng);
            updated_friend.timer = 0;
            updated_friend.silence_period = cfg.draw_silence_period(rng);
            let friend_ref = updated_friend.member_ref.clone();
            return (
                updated,
                Some(updated_friend),
                StepEvent::Exchanged { friend: friend_ref },
            );
        }
    }

    // Out of range, or a singleton group: the pseudonym must still change.
    updated.key_b = regen(rng);
    updated.timer = 0;
    updated.silence_period = cfg.draw_silence_period(rng);
    (updated, None, StepEvent::Regenerated)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gf::FieldSpec;
    use crate::keygen::{derive_key_b, mix_tier2, Key, KeyMaterial, KeygenParams, Scheme, Seed};
    use crate::linalg::{SymbolVector, VandermondeMatrix};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn test_key_b(tag: u16) -> Key {
        let spec = FieldSpec::new(8).unwrap();
        Key {
            scheme: Scheme::NetworkCoding,
            role: KeyRole::KeyB,
            material: KeyMaterial::Symbols(
                SymbolVector::new(spec, vec![tag & 0xFF, tag >> 8]).unwrap(),
            ),
        }
    }

    fn member(name: &str, tag: u16, loc: (f64, f64), silence: u64) -> MemberState {
        MemberState::new(name, test_key_b(tag), loc, silence, "g1").unwrap()
    }

    #[test]
    fn distance_examples() {
        assert_eq!(distance((2.0, 7.0), (2.0, 7.0)), 0.0);
        assert_eq!(distance((0.0, 0.0), (3.0, 4.0)), 5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let a = (rng.gen_range(-1e3..1e3), rng.gen_range(-1e3..1e3));
            let b = (rng.gen_range(-1e3..1e3), rng.gen_range(-1e3..1e3));
            assert_eq!(distance(a, b), distance(b, a));
        }
    }

    #[test]
    fn tick_increments_only_the_timer() {
        let m = member("a", 1, (0.0, 0.0), 5);
        let m1 = tick(m.clone());
        assert_eq!(m1.timer, 1);
        let mut mn = m.clone();
        for _ in 0..7 {
            mn = tick(mn);
        }
        assert_eq!(mn.timer, 7);
        assert_eq!(mn.key_b, m.key_b);
        assert_eq!(mn.location, m.location);
    }

    #[test]
    fn step_noop_before_silence_period() {
        let cfg = IgsConfig::new(1, 10, 50.0).unwrap();
        let m = member("a", 1, (0.0, 0.0), 5);
        let group = vec![member("b", 2, (1.0, 0.0), 5)];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (updated, friend, event) = step(&m, &group, &mut rng, &cfg, &mut |_| test_key_b(9));
        assert_eq!(updated, m);
        assert!(friend.is_none());
        assert_eq!(event, StepEvent::None);
    }

    #[test]
    fn step_exchanges_with_colocated_friend() {
        let cfg = IgsConfig::new(1, 10, 50.0).unwrap();
        let mut m = member("a", 1, (0.0, 0.0), 3);
        m.timer = 3;
        let f = member("b", 2, (0.0, 0.0), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (updated, friend, event) =
            step(&m, &[f.clone()], &mut rng, &cfg, &mut |_| test_key_b(9));
        let friend = friend.unwrap();
        assert_eq!(event, StepEvent::Exchanged { friend: "b".into() });
        assert_eq!(updated.key_b, f.key_b);
        assert_eq!(friend.key_b, m.key_b);
        assert_eq!(updated.timer, 0);
        assert_eq!(friend.timer, 0);
    }

    #[test]
    fn step_regenerates_when_friend_out_of_range() {
        let cfg = IgsConfig::new(1, 10, 50.0).unwrap();
        let mut m = member("a", 1, (0.0, 0.0), 3);
        m.timer = 3;
        let f = member("b", 2, (51.0, 0.0), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let old_key = m.key_b.clone();
        let (updated, friend, event) = step(&m, &[f], &mut rng, &cfg, &mut |_| test_key_b(9));
        assert!(friend.is_none());
        assert_eq!(event, StepEvent::Regenerated);
        assert_ne!(updated.key_b, old_key);
        assert_eq!(updated.timer, 0);
    }

    #[test]
    fn empty_group_falls_back_to_regeneration() {
        let cfg = IgsConfig::new(1, 10, 50.0).unwrap();
        let mut m = member("a", 1, (0.0, 0.0), 3);
        m.timer = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, friend, event) = step(&m, &[], &mut rng, &cfg, &mut |_| test_key_b(9));
        assert!(friend.is_none());
        assert_eq!(event, StepEvent::Regenerated);
    }

    /// Small-scale conservation + replay run; the large-scale version lives in
    /// the acceptance suite.
    #[test]
    fn group_multiset_conservation_and_replay() {
        let params = KeygenParams::production_default();
        let spec = params.spec();
        let matrix = VandermondeMatrix::with_default_coeffs(spec, params.n()).unwrap();
        let cfg = IgsConfig::new(2, 5, 15.0).unwrap();

        let run = |seed: u64| -> (Vec<StepEvent>, Vec<String>) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let key_a_syms =
                SymbolVector::new(spec, (0..params.k() as u16).collect::<Vec<_>>()).unwrap();
            let key_a = Key {
                scheme: Scheme::NetworkCoding,
                role: KeyRole::KeyA,
                material: KeyMaterial::Symbols(key_a_syms),
            };
            let mut regen = {
                let matrix = matrix.clone();
                let key_a = key_a.clone();
                move |rng: &mut ChaCha8Rng| {
                    let seed = Seed::generate(rng, spec, params.n() - params.k());
                    let b = mix_tier2(&key_a, &seed, &params).unwrap();
                    derive_key_b(&b, &matrix, &params, params.draw_offset(rng)).unwrap()
                }
            };
            let mut members: Vec<MemberState> = (0..4)
                .map(|i| {
                    let key = regen(&mut rng);
                    MemberState::new(
                        format!("m{i}"),
                        key,
                        (10.0 * i as f64, 0.0),
                        cfg.draw_silence_period(&mut rng),
                        "g",
                    )
                    .unwrap()
                })
                .collect();

            let mut events = Vec::new();
            for _ in 0..500 {
                for idx in 0..members.len() {
                    members[idx] = tick(members[idx].clone());
                    let before: BTreeMap<Vec<u8>, usize> = members
                        .iter()
                        .map(|m| m.key_b.bytes())
                        .fold(BTreeMap::new(), |mut acc, k| {
                            *acc.entry(k).or_default() += 1;
                            acc
                        });
                    let me = members[idx].clone();
                    let group: Vec<MemberState> = members
                        .iter()
                        .filter(|m| m.member_ref != me.member_ref)
                        .cloned()
                        .collect();
                    let (updated, friend, event) =
                        step(&me, &group, &mut rng, &cfg, &mut regen);
                    members[idx] = updated;
                    if let Some(f) = friend {
                        let pos = members
                            .iter()
                            .position(|m| m.member_ref == f.member_ref)
                            .unwrap();
                        members[pos] = f;
                    }
                    let after: BTreeMap<Vec<u8>, usize> = members
                        .iter()
                        .map(|m| m.key_b.bytes())
                        .fold(BTreeMap::new(), |mut acc, k| {
                            *acc.entry(k).or_default() += 1;
                            acc
                        });
                    match &event {
                        StepEvent::Exchanged { .. } => assert_eq!(before, after),
                        StepEvent::Regenerated => {
                            let diff: usize = before
                                .iter()
                                .map(|(k, &v)| v.abs_diff(after.get(k).copied().unwrap_or(0)))
                                .chain(
                                    after
                                        .iter()
                                        .filter(|(k, _)| !before.contains_key(*k))
                                        .map(|(_, &v)| v),
                                )
                                .sum();
                            assert_eq!(diff, 2, "exactly one element replaced");
                        }
                        StepEvent::None => assert_eq!(before, after),
                    }
                    events.push(event);
                }
            }
            let keys = members.iter().map(|m| m.key_b.hex()).collect();
            (events, keys)
        };

        let (e1, k1) = run(7);
        let (e2, k2) = run(7);
        assert_eq!(e1, e2, "replay determinism");
        assert_eq!(k1, k2);
        assert!(e1.iter().any(|e| matches!(e, StepEvent::Exchanged { .. })));
        assert!(e1.iter().any(|e| matches!(e, StepEvent::Regenerated)));
    }
}
