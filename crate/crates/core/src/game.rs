//! The four-player binary policy game: roles, actions, joint profiles,
//! payoff tables, best responses and pure-strategy Nash equilibria.
//!
//! Every profile is encoded as a 4-bit index with the Industrialist in the
//! most significant bit, so the 16 profiles are `0..16` and the all-index-0
//! profile (the tragedy profile) is index 0.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::scalar::Payoff;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Industrialist,
    Government,
    Activist,
    Citizen,
}

impl Role {
    /// Canonical iteration order.
    pub const ALL: [Role; 4] = [Role::Industrialist, Role::Government, Role::Activist, Role::Citizen];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Role> {
        Role::ALL.get(index).copied()
    }

    /// Structural label, kept in every experimental condition.
    pub fn label(self) -> &'static str {
        match self {
            Role::Industrialist => "Industrialist",
            Role::Government => "Government",
            Role::Activist => "Activist",
            Role::Citizen => "Citizen",
        }
    }

    /// Lowercase key used in files.
    pub fn key(self) -> &'static str {
        match self {
            Role::Industrialist => "industrialist",
            Role::Government => "government",
            Role::Activist => "activist",
            Role::Citizen => "citizen",
        }
    }

    pub fn parse(s: &str) -> Option<Role> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "industrialist" | "i" => Some(Role::Industrialist),
            "government" | "g" => Some(Role::Government),
            "activist" | "environmental activist" | "a" => Some(Role::Activist),
            "citizen" | "citizen coalition" | "c" => Some(Role::Citizen),
            _ => None,
        }
    }

    pub fn actions(self) -> [Action; 2] {
        [Action::new(self, 0), Action::new(self, 1)]
    }

    fn bit(self) -> u8 {
        3 - self as u8
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

const CANONICAL_NAMES: [[&str; 2]; 4] = [
    ["POLLUTE", "CLEAN"],
    ["NOREG", "REGULATE"],
    ["NOCAMPAIGN", "CAMPAIGN"],
    ["BUY_CHEAP", "SUPPORT_GREEN"],
];

const SHORT_NAMES: [[&str; 2]; 4] = [
    ["POLLUTE", "CLEAN"],
    ["NO_REG", "REG"],
    ["NO_CAM", "CAM"],
    ["BUY_CHEAP", "SUPPORT_GREEN"],
];

const ALIASES: [[&[&str]; 2]; 4] = [
    [&[], &[]],
    [&["NO_REG", "NO_REGULATE", "NO_REGULATION"], &["REG"]],
    [&["NO_CAM", "NO_CAMPAIGN"], &["CAM"]],
    [&["BUYCHEAP"], &["SUPPORTGREEN"]],
];

/// One of a role's two actions. Index 0 is the first-listed (tragedy-side) action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Action {
    role: Role,
    index: u8,
}

impl Action {
    pub const POLLUTE: Action = Action { role: Role::Industrialist, index: 0 };
    pub const CLEAN: Action = Action { role: Role::Industrialist, index: 1 };
    pub const NOREG: Action = Action { role: Role::Government, index: 0 };
    pub const REGULATE: Action = Action { role: Role::Government, index: 1 };
    pub const NOCAMPAIGN: Action = Action { role: Role::Activist, index: 0 };
    pub const CAMPAIGN: Action = Action { role: Role::Activist, index: 1 };
    pub const BUY_CHEAP: Action = Action { role: Role::Citizen, index: 0 };
    pub const SUPPORT_GREEN: Action = Action { role: Role::Citizen, index: 1 };

    /// # Panics
    /// If `index > 1`.
    pub fn new(role: Role, index: u8) -> Action {
        assert!(index < 2, "binary action index out of range: {index}");
        Action { role, index }
    }

    pub fn role(self) -> Role {
        self.role
    }

    pub fn index(self) -> u8 {
        self.index
    }

    pub fn name(self) -> &'static str {
        CANONICAL_NAMES[self.role.index()][self.index as usize]
    }

    /// Abbreviated name used in rendered payoff tables.
    pub fn short_name(self) -> &'static str {
        SHORT_NAMES[self.role.index()][self.index as usize]
    }

    pub fn other(self) -> Action {
        Action { role: self.role, index: 1 - self.index }
    }

    /// Parses an action key for `role`, case-insensitively, accepting the
    /// abbreviated table spellings.
    pub fn parse(role: Role, key: &str) -> Option<Action> {
        let normalized: String = key
            .trim()
            .chars()
            .map(|c| if c == ' ' || c == '-' { '_' } else { c.to_ascii_uppercase() })
            .collect();
        (0..2u8).map(|i| Action::new(role, i)).find(|a| {
            a.name() == normalized
                || a.short_name() == normalized
                || ALIASES[role.index()][a.index as usize].contains(&normalized.as_str())
        })
    }

    /// Parses a key without knowing the role in advance.
    pub fn parse_any(key: &str) -> Option<Action> {
        Role::ALL.iter().find_map(|&r| Action::parse(r, key))
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for Action {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        Action::parse_any(&name).ok_or_else(|| serde::de::Error::custom(format!("unknown action {name:?}")))
    }
}

/// Joint pure strategy profile: one action per role.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Profile(u8);

impl Profile {
    /// (POLLUTE, NOREG, NOCAMPAIGN, BUY_CHEAP)
    pub const TRAGEDY: Profile = Profile(0b0000);
    /// (CLEAN, REGULATE, CAMPAIGN, SUPPORT_GREEN)
    pub const GREEN: Profile = Profile(0b1111);

    pub const COUNT: usize = 16;

    pub fn from_index(index: usize) -> Option<Profile> {
        (index < Self::COUNT).then_some(Profile(index as u8))
    }

    /// Builds a profile from per-role actions given in canonical role order.
    ///
    /// # Panics
    /// If an action does not belong to the role in its slot.
    pub fn from_actions(actions: [Action; 4]) -> Profile {
        let mut p = Profile(0);
        for (role, action) in Role::ALL.into_iter().zip(actions) {
            assert_eq!(action.role, role, "action {action} is not a {role} action");
            p = p.with(action);
        }
        p
    }

    pub fn from_indices(indices: [u8; 4]) -> Profile {
        Profile::from_actions([
            Action::new(Role::Industrialist, indices[0]),
            Action::new(Role::Government, indices[1]),
            Action::new(Role::Activist, indices[2]),
            Action::new(Role::Citizen, indices[3]),
        ])
    }

    pub fn all() -> impl Iterator<Item = Profile> + Clone {
        (0..Self::COUNT as u8).map(Profile)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn action(self, role: Role) -> Action {
        Action { role, index: (self.0 >> role.bit()) & 1 }
    }

    pub fn actions(self) -> [Action; 4] {
        Role::ALL.map(|r| self.action(r))
    }

    /// Same profile with `action` substituted in its role's slot.
    pub fn with(self, action: Action) -> Profile {
        let bit = action.role.bit();
        Profile((self.0 & !(1 << bit)) | (action.index << bit))
    }

    /// The profile reached when `role` alone switches action.
    pub fn deviate(self, role: Role) -> Profile {
        Profile(self.0 ^ (1 << role.bit()))
    }

    /// Parses four comma- or space-separated action keys, or a named profile.
    pub fn parse(s: &str) -> Option<Profile> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a_green" | "green" => return Some(Profile::GREEN),
            "a_tragedy" | "tragedy" => return Some(Profile::TRAGEDY),
            _ => {}
        }
        let keys: Vec<&str> = s
            .split(|c: char| c == ',' || c.is_whitespace() || c == '(' || c == ')')
            .filter(|k| !k.is_empty())
            .collect();
        if keys.len() != 4 {
            return None;
        }
        let mut actions = [Action::POLLUTE; 4];
        for (slot, (role, key)) in Role::ALL.iter().zip(keys).enumerate() {
            actions[slot] = Action::parse(*role, key)?;
        }
        Some(Profile::from_actions(actions))
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [i, g, a, c] = self.actions();
        write!(f, "({i}, {g}, {a}, {c})")
    }
}

impl fmt::Debug for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl Serialize for Profile {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let names = self.actions().map(|a| a.name());
        names.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Profile {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let names = <[String; 4]>::deserialize(d)?;
        Profile::parse(&names.join(","))
            .ok_or_else(|| serde::de::Error::custom(format!("invalid profile {names:?}")))
    }
}

/// Set of profiles as a 16-bit mask.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ProfileSet(u16);

impl ProfileSet {
    pub fn empty() -> ProfileSet {
        ProfileSet(0)
    }

    pub fn full() -> ProfileSet {
        ProfileSet(u16::MAX)
    }

    pub fn insert(&mut self, p: Profile) {
        self.0 |= 1 << p.0;
    }

    pub fn contains(self, p: Profile) -> bool {
        self.0 & (1 << p.0) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Profile> {
        Profile::all().filter(move |p| self.contains(*p))
    }
}

impl FromIterator<Profile> for ProfileSet {
    fn from_iter<I: IntoIterator<Item = Profile>>(iter: I) -> Self {
        let mut s = ProfileSet::empty();
        for p in iter {
            s.insert(p);
        }
        s
    }
}

impl fmt::Debug for ProfileSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

/// Argmax set over a role's two actions: one action, or both on an exact tie.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ActionSet {
    role: Role,
    mask: u8,
}

impl ActionSet {
    pub fn role(self) -> Role {
        self.role
    }

    pub fn contains(self, a: Action) -> bool {
        a.role == self.role && self.mask & (1 << a.index) != 0
    }

    pub fn len(self) -> usize {
        self.mask.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.mask == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Action> {
        self.role.actions().into_iter().filter(move |a| self.contains(*a))
    }

    /// The lowest-index member; the tie-break used by scripted best responders.
    pub fn first(self) -> Action {
        self.iter().next().expect("argmax set is never empty")
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TableError {
    #[error("payoff table needs 16 profiles, got {0}")]
    WrongSize(usize),
    #[error("profile {0} listed more than once")]
    DuplicateProfile(Profile),
    #[error("profile {0} missing")]
    MissingProfile(Profile),
    #[error("non-finite payoff for {role} at {profile}")]
    NonFinite { profile: Profile, role: Role },
}

/// Payoffs for all 16 profiles, one value per role.
#[derive(Debug, Clone, PartialEq)]
pub struct PayoffTable<T> {
    entries: [[T; 4]; 16],
}

impl<T: Payoff> PayoffTable<T> {
    /// Builds a table from an array indexed by `Profile::index()`.
    pub fn from_array(entries: [[T; 4]; 16]) -> Result<Self, TableError> {
        for p in Profile::all() {
            for r in Role::ALL {
                if !entries[p.index()][r.index()].is_finite_payoff() {
                    return Err(TableError::NonFinite { profile: p, role: r });
                }
            }
        }
        Ok(PayoffTable { entries })
    }

    /// Builds a table from (profile, payoffs) pairs in any order.
    pub fn from_entries<I>(entries: I) -> Result<Self, TableError>
    where
        I: IntoIterator<Item = (Profile, [T; 4])>,
    {
        let mut slots: [Option<[T; 4]>; 16] = [None; 16];
        let mut n = 0;
        for (p, payoffs) in entries {
            n += 1;
            if slots[p.index()].replace(payoffs).is_some() {
                return Err(TableError::DuplicateProfile(p));
            }
        }
        if n != 16 {
            return Err(TableError::WrongSize(n));
        }
        let mut out = [[T::zero(); 4]; 16];
        for p in Profile::all() {
            out[p.index()] = slots[p.index()].ok_or(TableError::MissingProfile(p))?;
        }
        Self::from_array(out)
    }

    pub fn zeros() -> Self {
        PayoffTable { entries: [[T::zero(); 4]; 16] }
    }

    pub fn payoff(&self, profile: Profile, role: Role) -> T {
        self.entries[profile.index()][role.index()]
    }

    pub fn payoffs(&self, profile: Profile) -> [T; 4] {
        self.entries[profile.index()]
    }

    pub fn entries(&self) -> impl Iterator<Item = (Profile, [T; 4])> + '_ {
        Profile::all().map(|p| (p, self.entries[p.index()]))
    }

    /// Applies `f` to one role's payoffs, leaving the others untouched.
    pub fn map_role(&self, role: Role, f: impl Fn(T) -> T) -> Self {
        let mut entries = self.entries;
        for row in entries.iter_mut() {
            row[role.index()] = f(row[role.index()]);
        }
        PayoffTable { entries }
    }

    pub fn set(&mut self, profile: Profile, role: Role, value: T) {
        self.entries[profile.index()][role.index()] = value;
    }

    /// Argmax over `role`'s actions with every other role held at its action
    /// in `context`. The role's own slot in `context` is ignored.
    pub fn best_response(&self, role: Role, context: Profile) -> ActionSet {
        let [a0, a1] = role.actions();
        let u0 = self.payoff(context.with(a0), role);
        let u1 = self.payoff(context.with(a1), role);
        let mask = if u0 > u1 {
            0b01
        } else if u1 > u0 {
            0b10
        } else {
            0b11
        };
        ActionSet { role, mask }
    }

    /// Weak Nash condition: no role gains strictly by deviating alone.
    pub fn is_nash(&self, profile: Profile) -> bool {
        Role::ALL
            .iter()
            .all(|&r| self.best_response(r, profile).contains(profile.action(r)))
    }

    pub fn nash_equilibria(&self) -> ProfileSet {
        Profile::all().filter(|&p| self.is_nash(p)).collect()
    }

    pub fn dominance(&self) -> DominanceClass {
        let ne = self.nash_equilibria();
        DominanceClass::from_membership(ne.contains(Profile::GREEN), ne.contains(Profile::TRAGEDY))
    }

    /// Converts payoffs to another scalar type.
    pub fn convert<U: Payoff>(&self, f: impl Fn(T) -> U) -> PayoffTable<U> {
        PayoffTable { entries: self.entries.map(|row| row.map(&f)) }
    }
}

/// All pure-strategy Nash equilibria of `table`.
pub fn enumerate_nash<T: Payoff>(table: &PayoffTable<T>) -> ProfileSet {
    table.nash_equilibria()
}

pub fn classify_dominance<T: Payoff>(table: &PayoffTable<T>) -> DominanceClass {
    table.dominance()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OutcomeType {
    GreenTransition,
    TragedyOfCommons,
    Other,
}

impl OutcomeType {
    pub fn label(self) -> &'static str {
        match self {
            OutcomeType::GreenTransition => "Green Transition",
            OutcomeType::TragedyOfCommons => "Tragedy of Commons",
            OutcomeType::Other => "Other",
        }
    }
}

pub fn classify_outcome(profile: Profile) -> OutcomeType {
    match profile {
        Profile::GREEN => OutcomeType::GreenTransition,
        Profile::TRAGEDY => OutcomeType::TragedyOfCommons,
        _ => OutcomeType::Other,
    }
}

/// Which canonical profiles are equilibria of a table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DominanceClass {
    GreenDominant,
    TragedyDominant,
    BothCanonical,
    NeitherCanonical,
}

impl DominanceClass {
    pub fn from_membership(green_is_nash: bool, tragedy_is_nash: bool) -> DominanceClass {
        match (green_is_nash, tragedy_is_nash) {
            (true, false) => DominanceClass::GreenDominant,
            (false, true) => DominanceClass::TragedyDominant,
            (true, true) => DominanceClass::BothCanonical,
            (false, false) => DominanceClass::NeitherCanonical,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DominanceClass::GreenDominant => "GreenDominant",
            DominanceClass::TragedyDominant => "TragedyDominant",
            DominanceClass::BothCanonical => "BothCanonical",
            DominanceClass::NeitherCanonical => "NeitherCanonical",
        }
    }
}

impl fmt::Display for DominanceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_encoding_round_trips() {
        for p in Profile::all() {
            assert_eq!(Profile::from_actions(p.actions()), p);
            assert_eq!(Profile::parse(&p.to_string()), Some(p));
            for r in Role::ALL {
                assert_eq!(p.deviate(r).deviate(r), p);
                assert_ne!(p.deviate(r).action(r), p.action(r));
            }
        }
        assert_eq!(
            Profile::GREEN.actions(),
            [Action::CLEAN, Action::REGULATE, Action::CAMPAIGN, Action::SUPPORT_GREEN]
        );
        assert_eq!(
            Profile::TRAGEDY.actions(),
            [Action::POLLUTE, Action::NOREG, Action::NOCAMPAIGN, Action::BUY_CHEAP]
        );
    }

    #[test]
    fn action_aliases() {
        assert_eq!(Action::parse(Role::Government, "NO_REG"), Some(Action::NOREG));
        assert_eq!(Action::parse(Role::Government, "reg"), Some(Action::REGULATE));
        assert_eq!(Action::parse(Role::Activist, "NO_CAM"), Some(Action::NOCAMPAIGN));
        assert_eq!(Action::parse(Role::Activist, "Cam"), Some(Action::CAMPAIGN));
        assert_eq!(Action::parse(Role::Citizen, "support green"), Some(Action::SUPPORT_GREEN));
        assert_eq!(Action::parse(Role::Citizen, "POLLUTE"), None);
        assert_eq!(Action::parse_any("clean"), Some(Action::CLEAN));
    }

    #[test]
    fn classify_outcome_examples() {
        assert_eq!(classify_outcome(Profile::GREEN), OutcomeType::GreenTransition);
        assert_eq!(classify_outcome(Profile::TRAGEDY), OutcomeType::TragedyOfCommons);
        let mixed = Profile::from_actions([Action::CLEAN, Action::NOREG, Action::CAMPAIGN, Action::BUY_CHEAP]);
        assert_eq!(classify_outcome(mixed), OutcomeType::Other);
    }

    #[test]
    fn outcome_partition_is_1_1_14() {
        let mut counts = [0; 3];
        for p in Profile::all() {
            counts[classify_outcome(p) as usize] += 1;
        }
        assert_eq!(counts, [1, 1, 14]);
    }

    #[test]
    fn all_zero_table_everything_ties() {
        let t = PayoffTable::<f64>::zeros();
        for r in Role::ALL {
            for p in Profile::all() {
                assert_eq!(t.best_response(r, p).len(), 2);
            }
        }
        assert_eq!(t.nash_equilibria(), ProfileSet::full());
        assert_eq!(t.dominance(), DominanceClass::BothCanonical);
    }

    #[test]
    fn table_construction_errors() {
        let rows: Vec<_> = Profile::all().take(15).map(|p| (p, [0.0; 4])).collect();
        assert_eq!(PayoffTable::from_entries(rows).unwrap_err(), TableError::WrongSize(15));
        let mut rows: Vec<_> = Profile::all().map(|p| (p, [0.0; 4])).collect();
        rows[15].0 = Profile::TRAGEDY;
        assert_eq!(
            PayoffTable::from_entries(rows).unwrap_err(),
            TableError::DuplicateProfile(Profile::TRAGEDY)
        );
        let mut arr = [[0.0; 4]; 16];
        arr[3][2] = f64::NAN;
        assert!(matches!(PayoffTable::from_array(arr), Err(TableError::NonFinite { .. })));
    }

    #[test]
    fn strictly_dominant_actions_give_singleton() {
        // Each role earns +1 for its green action regardless of others.
        let mut t = PayoffTable::<f64>::zeros();
        for p in Profile::all() {
            for r in Role::ALL {
                t.set(p, r, p.action(r).index() as f64);
            }
        }
        assert_eq!(t.nash_equilibria().iter().collect::<Vec<_>>(), vec![Profile::GREEN]);
        assert_eq!(t.dominance(), DominanceClass::GreenDominant);
    }
}
