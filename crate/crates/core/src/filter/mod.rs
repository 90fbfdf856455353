//! Filter-list evaluation: Adblock network rules, Disconnect domain lists,
//! the blocked-request closure over redirects and frames, and follow-up
//! requests riding on cookies set by blocked ones.

mod closure;
mod disconnect;
mod rules;

pub use closure::{
    blocked_closure, is_subdocument, resource_type_of, trackers_follow_up, BlockStatus, BlockVerdict, Blocker,
    ListConfig, VisitVerdicts,
};
pub use disconnect::DisconnectList;
pub use rules::{
    parse_rule, Anchor, FilterRule, MatchOutcome, Pattern, RequestContext, ResourceType, RuleKind, RuleOptions,
    RuleParseReport, RuleSet, SkipReason,
};

/// Parses Adblock filter text into an immutable rule set.
pub fn parse_filter_list(text: &str) -> RuleSet {
    RuleSet::parse(text)
}
