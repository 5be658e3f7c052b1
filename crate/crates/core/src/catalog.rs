//! Page vocabulary with funnel-category tags.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TraceError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PageCategory {
    Homepage,
    SearchResults,
    ProductDetail,
    Checkout,
    OrderConfirmation,
    UpcomingOrder,
    Account,
    Content,
    Support,
}

impl PageCategory {
    pub const ALL: [PageCategory; 9] = [
        PageCategory::Homepage,
        PageCategory::SearchResults,
        PageCategory::ProductDetail,
        PageCategory::Checkout,
        PageCategory::OrderConfirmation,
        PageCategory::UpcomingOrder,
        PageCategory::Account,
        PageCategory::Content,
        PageCategory::Support,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&c| c == self).unwrap()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PageSpec {
    pub name: String,
    pub category: PageCategory,
    /// Frequently visited page used for stratified embedding visualizations.
    #[serde(default)]
    pub common: bool,
    /// Relative popularity within its category.
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

/// Categories the label builder needs at least one page for.
pub const REQUIRED_CATEGORIES: [PageCategory; 5] = [
    PageCategory::Homepage,
    PageCategory::SearchResults,
    PageCategory::ProductDetail,
    PageCategory::UpcomingOrder,
    PageCategory::OrderConfirmation,
];

pub const MIN_COMMON_PAGES: usize = 7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<PageSpec>", into = "Vec<PageSpec>")]
pub struct PageCatalog {
    pages: Vec<PageSpec>,
    index: HashMap<String, usize>,
}

impl TryFrom<Vec<PageSpec>> for PageCatalog {
    type Error = TraceError;

    fn try_from(pages: Vec<PageSpec>) -> Result<Self> {
        PageCatalog::new(pages)
    }
}

impl From<PageCatalog> for Vec<PageSpec> {
    fn from(c: PageCatalog) -> Self {
        c.pages
    }
}

impl PageCatalog {
    pub fn new(pages: Vec<PageSpec>) -> Result<Self> {
        let mut index = HashMap::with_capacity(pages.len());
        for (i, p) in pages.iter().enumerate() {
            if index.insert(p.name.clone(), i).is_some() {
                return Err(TraceError::config(format!("duplicate page `{}`", p.name)));
            }
            if !(p.weight > 0.0 && p.weight.is_finite()) {
                return Err(TraceError::config(format!(
                    "page `{}` needs a positive weight",
                    p.name
                )));
            }
        }
        Ok(PageCatalog { pages, index })
    }

    /// Checks the catalog can back label construction and visualization sampling.
    pub fn validate(&self) -> Result<()> {
        for cat in REQUIRED_CATEGORIES {
            if self.in_category(cat).next().is_none() {
                return Err(TraceError::config(format!("catalog has no {cat:?} page")));
            }
        }
        let common = self.common_pages().len();
        if common < MIN_COMMON_PAGES {
            return Err(TraceError::config(format!(
                "catalog flags {common} common pages, need {MIN_COMMON_PAGES}"
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.pages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pages.is_empty()
    }

    pub fn pages(&self) -> &[PageSpec] {
        &self.pages
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn category(&self, name: &str) -> Option<PageCategory> {
        self.position(name).map(|i| self.pages[i].category)
    }

    pub fn in_category(&self, cat: PageCategory) -> impl Iterator<Item = usize> + '_ {
        self.pages
            .iter()
            .enumerate()
            .filter(move |(_, p)| p.category == cat)
            .map(|(i, _)| i)
    }

    pub fn common_pages(&self) -> Vec<&str> {
        self.pages
            .iter()
            .filter(|p| p.common)
            .map(|p| p.name.as_str())
            .collect()
    }

    /// Travel-site vocabulary of 50 pages.
    pub fn travel_default() -> Self {
        use PageCategory::*;
        let spec = |name: &str, category, common, weight| PageSpec {
            name: name.to_string(),
            category,
            common,
            weight,
        };
        let pages = vec![
            spec("home", Homepage, true, 1.0),
            spec("search_hotels", SearchResults, true, 3.0),
            spec("search_flights", SearchResults, true, 2.5),
            spec("search_packages", SearchResults, false, 1.5),
            spec("search_cars", SearchResults, false, 0.8),
            spec("search_activities", SearchResults, false, 0.6),
            spec("search_cruises", SearchResults, false, 0.3),
            spec("hotel_details", ProductDetail, true, 3.0),
            spec("hotel_rooms", ProductDetail, false, 1.5),
            spec("hotel_reviews", ProductDetail, false, 1.2),
            spec("hotel_photos", ProductDetail, false, 0.8),
            spec("flight_details", ProductDetail, true, 2.0),
            spec("flight_seats", ProductDetail, false, 0.5),
            spec("package_details", ProductDetail, false, 1.2),
            spec("car_details", ProductDetail, false, 0.6),
            spec("activity_details", ProductDetail, false, 0.6),
            spec("cruise_details", ProductDetail, false, 0.3),
            spec("checkout_hotel", Checkout, false, 2.0),
            spec("checkout_flight", Checkout, false, 1.5),
            spec("checkout_package", Checkout, false, 0.8),
            spec("checkout_car", Checkout, false, 0.4),
            spec("payment", Checkout, false, 1.5),
            spec("booking_confirmation", OrderConfirmation, false, 1.0),
            spec("trips_upcoming", UpcomingOrder, true, 2.0),
            spec("trip_details", UpcomingOrder, false, 1.5),
            spec("itinerary", UpcomingOrder, false, 1.0),
            spec("manage_booking", UpcomingOrder, false, 0.8),
            spec("checkin_online", UpcomingOrder, false, 0.4),
            spec("sign_in", Account, false, 1.5),
            spec("register", Account, false, 0.5),
            spec("account_profile", Account, false, 0.6),
            spec("rewards", Account, false, 0.8),
            spec("saved_lists", Account, false, 1.0),
            spec("price_alerts", Account, false, 0.5),
            spec("payment_methods", Account, false, 0.3),
            spec("deals", Content, true, 2.0),
            spec("destination_guide", Content, false, 1.5),
            spec("city_guide", Content, false, 1.0),
            spec("travel_inspiration", Content, false, 1.0),
            spec("last_minute", Content, false, 0.8),
            spec("weekend_getaways", Content, false, 0.6),
            spec("travel_blog", Content, false, 0.6),
            spec("member_prices", Content, false, 0.5),
            spec("gift_cards", Content, false, 0.2),
            spec("help_center", Support, false, 1.0),
            spec("contact_us", Support, false, 0.5),
            spec("cancellation", Support, false, 0.5),
            spec("refund_status", Support, false, 0.3),
            spec("travel_advisories", Support, false, 0.4),
            spec("privacy", Support, false, 0.1),
        ];
        PageCatalog::new(pages).expect("default catalog is well formed")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_catalog_is_valid() {
        let c = PageCatalog::travel_default();
        c.validate().unwrap();
        assert_eq!(c.len(), 50);
        assert_eq!(c.common_pages().len(), 7);
        assert_eq!(c.category("home"), Some(PageCategory::Homepage));
        assert_eq!(c.category("nope"), None);
    }

    #[test]
    fn serde_round_trip_and_duplicates() {
        let c = PageCatalog::travel_default();
        let json = serde_json::to_string(&c).unwrap();
        let back: PageCatalog = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
        let dup = r#"[{"name":"a","category":"homepage"},{"name":"a","category":"content"}]"#;
        assert!(serde_json::from_str::<PageCatalog>(dup).is_err());
    }
}
