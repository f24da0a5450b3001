#include "deskqa/nlp.hpp"

#include <cctype>
#include <string>
#include <unordered_map>
#include <unordered_set>

#include "deskqa/text.hpp"

namespace deskqa::nlp {

namespace {

using WordSet = std::unordered_set<std::string_view>;

const WordSet kDeterminers = {"a",     "an",    "the",   "this", "that",  "these", "those", "my",
                              "your",  "his",   "her",   "its",  "our",   "their", "any",   "some",
                              "each",  "every", "all",   "no",   "another", "both", "either", "neither"};
const WordSet kPronouns = {"i",  "you",  "he",   "she",  "it",    "we",    "they",   "me",    "him",
                           "us", "them", "mine", "yours", "myself", "yourself", "someone", "anyone", "everyone"};
const WordSet kPrepositions = {"in",     "at",      "on",    "by",     "using",  "with",   "for",
                               "of",     "from",    "into",  "during", "after",  "before", "under",
                               "over",   "via",     "through", "about", "within", "without", "between",
                               "across", "against", "onto",  "per",    "upon",   "since",  "until",
                               "below",  "behind",  "near",  "inside", "outside", "towards", "toward"};
const WordSet kConjunctions = {"and", "or", "but", "so", "nor", "yet", "because", "if", "while", "although",
                               "unless", "whereas"};
const WordSet kWhWords = {"what", "who", "whom", "whose", "where", "when", "why", "how", "which"};
const WordSet kAuxiliaries = {"do",    "does",  "did",    "can",  "could", "will",  "would",
                              "shall", "should", "may",   "might", "must", "cannot"};
const WordSet kCopulas = {"am", "is", "are", "was", "were", "be", "been", "being"};
const WordSet kAdverbs = {"not",  "never", "also", "always", "often", "usually", "then", "there",
                          "here", "now",   "again", "just",  "only", "very",    "too",  "first",
                          "hello", "hi",   "please", "thanks", "yes",  "ok",     "okay"};

const WordSet kAdjectives = {
    "new",       "duplicate",  "old",       "lost",      "stolen",    "expired",   "valid",      "invalid",
    "standalone", "free",      "annual",    "monthly",   "daily",     "weekly",    "personal",   "corporate",
    "international", "domestic", "online",  "mobile",    "temporary", "permanent", "current",    "previous",
    "next",      "last",       "main",      "primary",   "secondary", "additional", "other",     "same",
    "different", "available",  "unavailable", "required", "optional", "common",    "important",  "simple",
    "complex",   "secure",     "active",    "inactive",  "locked",    "blocked",   "default",    "wrong",
    "correct",   "forgotten",  "replacement", "physical", "virtual",  "prepaid",   "local",      "remote",
    "external",  "internal",   "full",      "partial",   "minimum",   "maximum",   "high",       "low",
    "late",      "early",      "fast",      "slow",      "good",      "bad",       "easy",       "hard",
    "large",     "small",      "big",       "short",     "long",      "recent",    "following",  "above",
    "entire",    "multiple",   "single",    "several",   "many",      "few",       "various",    "standard",
    "premium",   "basic",      "lending",   "corrupt",   "broken",    "shared",    "public",     "private",
    "second",    "third",      "final",     "initial",   "urgent",    "slow",      "unable",     "able"};

struct Irregular {
  std::string_view lemma;
  std::string_view third;
  std::string_view past;
  std::string_view participle;
};

const std::vector<Irregular>& irregulars() {
  static const std::vector<Irregular> table = {
      {"be", "is", "was", "been"},          {"have", "has", "had", "had"},
      {"do", "does", "did", "done"},        {"go", "goes", "went", "gone"},
      {"get", "gets", "got", "got"},        {"make", "makes", "made", "made"},
      {"take", "takes", "took", "taken"},   {"give", "gives", "gave", "given"},
      {"send", "sends", "sent", "sent"},    {"lend", "lends", "lent", "lent"},
      {"run", "runs", "ran", "run"},        {"set", "sets", "set", "set"},
      {"reset", "resets", "reset", "reset"}, {"steal", "steals", "stole", "stolen"},
      {"lose", "loses", "lost", "lost"},    {"know", "knows", "knew", "known"},
      {"see", "sees", "saw", "seen"},       {"write", "writes", "wrote", "written"},
      {"read", "reads", "read", "read"},    {"pay", "pays", "paid", "paid"},
      {"hold", "holds", "held", "held"},    {"keep", "keeps", "kept", "kept"},
      {"find", "finds", "found", "found"},  {"begin", "begins", "began", "begun"},
      {"come", "comes", "came", "come"},    {"become", "becomes", "became", "become"},
      {"leave", "leaves", "left", "left"},  {"put", "puts", "put", "put"},
      {"bring", "brings", "brought", "brought"}, {"tell", "tells", "told", "told"},
      {"think", "thinks", "thought", "thought"}, {"buy", "buys", "bought", "bought"},
      {"build", "builds", "built", "built"}, {"choose", "chooses", "chose", "chosen"},
      {"show", "shows", "showed", "shown"}, {"mean", "means", "meant", "meant"},
      {"sell", "sells", "sold", "sold"},    {"forget", "forgets", "forgot", "forgotten"},
      {"let", "lets", "let", "let"},        {"cut", "cuts", "cut", "cut"},
      {"shut", "shuts", "shut", "shut"},    {"input", "inputs", "input", "input"},
      {"say", "says", "said", "said"},      {"spend", "spends", "spent", "spent"},
      {"understand", "understands", "understood", "understood"},
      {"withdraw", "withdraws", "withdrew", "withdrawn"},
      {"draw", "draws", "drew", "drawn"},   {"grow", "grows", "grew", "grown"},
      {"freeze", "freezes", "froze", "frozen"}, {"feel", "feels", "felt", "felt"},
  };
  return table;
}

const WordSet kVerbs = {
    "reset",    "get",      "want",     "need",     "apply",    "store",    "have",     "lend",
    "use",      "open",     "close",    "click",    "enter",    "select",   "submit",   "approve",
    "reject",   "install",  "configure", "create",  "delete",   "update",   "download", "upload",
    "run",      "restart",  "send",     "receive",  "log",      "login",    "list",     "describe",
    "show",     "contain",  "include",  "provide",  "allow",    "require",  "charge",   "pay",
    "issue",    "request",  "cancel",   "block",    "unlock",   "lock",     "change",   "set",
    "check",    "verify",   "access",   "connect",  "manage",   "process",  "assign",   "book",
    "call",     "contact",  "find",     "fix",      "help",     "keep",     "let",      "make",
    "mean",     "move",     "print",    "read",     "replace",  "report",   "save",     "see",
    "start",    "stop",     "take",     "transfer", "try",      "view",     "work",     "write",
    "add",      "remove",   "renew",    "expire",   "generate", "schedule", "sign",     "register",
    "raise",    "resolve",  "grant",    "encrypt",  "backup",   "sync",     "restore",  "map",
    "mount",    "link",     "load",     "fail",     "deny",     "lose",     "steal",    "order",
    "activate", "deactivate", "enable", "disable",  "display",  "explain",  "hold",     "support",
    "offer",    "cover",    "define",   "refer",    "follow",   "go",       "give",     "know",
    "think",    "look",     "ask",      "tell",     "become",   "leave",    "put",      "bring",
    "begin",    "turn",     "return",   "track",    "choose",   "buy",      "build",    "forget",
    "visit",    "navigate", "type",     "press",    "approve",  "notify",   "email",    "share",
    "edit",     "copy",     "paste",    "refresh",  "reboot",   "clear",    "fill",     "attach",
    "depend",   "belong",   "handle",   "calculate", "deduct",  "credit",   "debit",    "withdraw",
    "deposit",  "own",      "block",    "receive",  "provide",  "say",      "spend",
    "understand", "draw",   "grow",     "freeze",   "feel",     "come",     "do",       "be",
    "contact",  "escalate", "authenticate", "authorize", "validate", "migrate", "deploy", "monitor",
    "occur",    "appear",   "happen",   "prevent",  "protect",  "recover",  "retrieve", "assist"};

// Verbs that read more naturally as nouns when ambiguous out of context.
const WordSet kNounFirst = {"credit", "debit", "email", "issue", "request", "order", "process", "report",
                            "access", "backup", "map",   "link",  "list",  "book",    "call",    "support",
                            "type",   "view",   "work",  "transfer", "charge", "change", "deposit", "log",
                            "login",  "copy",   "store", "lock",  "set",   "start",   "help",    "return",
                            "display", "sign",  "cover", "order", "schedule", "track", "turn",   "look"};

const WordSet kDoubling = {"stop", "log", "plan", "ship", "map", "drop", "submit", "admit", "commit",
                           "permit", "transfer", "prefer", "refer", "occur", "control", "travel", "upload"};

const WordSet kPersonWords = {"admin",    "administrator", "user",      "manager",   "agent",    "employee",
                              "customer", "engineer",      "developer", "analyst",   "technician", "operator",
                              "owner",    "member",        "consumer",  "client",    "approver", "reviewer",
                              "supervisor", "staff",       "person",    "i",         "you",      "he",
                              "she",      "we",            "they",      "holder",    "cardholder", "banker",
                              "officer",  "clerk",         "teller",    "student",   "teacher",  "director"};

const WordSet kLocationWords = {"office",  "branch",  "portal",  "menu",    "page",   "screen",  "folder",
                                "building", "city",   "country", "site",    "server", "system",  "website",
                                "room",    "desk",    "tab",     "window",  "app",    "application", "store",
                                "bank",    "atm",     "settings", "dashboard", "inbox", "directory", "drive",
                                "campus",  "floor",   "region",  "location", "network", "cloud",  "account"};

const WordSet kTemporalWords = {"daily",     "weekly",   "monthly",  "yearly",   "annually", "today",
                                "tomorrow",  "yesterday", "monday",  "tuesday",  "wednesday", "thursday",
                                "friday",    "saturday", "sunday",   "morning",  "evening",  "night",
                                "midnight",  "noon",     "hour",     "hours",    "day",      "days",
                                "week",      "weeks",    "month",    "months",   "year",     "years",
                                "minute",    "minutes",  "weekend",  "quarter",  "annual",   "now"};

const WordSet kMonths = {"january", "february", "march",     "april",   "may",      "june",
                         "july",    "august",   "september", "october", "november", "december",
                         "jan",     "feb",      "mar",       "apr",     "jun",      "jul",
                         "aug",     "sep",      "sept",      "oct",     "nov",      "dec"};

bool is_vowel(char c) { return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u'; }

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0 || static_cast<unsigned char>(c) >= 0x80; }

bool is_number(std::string_view w) {
  if (w.empty()) return false;
  for (char c : w) {
    if (std::isdigit(static_cast<unsigned char>(c)) == 0 && c != '.' && c != ',' && c != ':' && c != '/') return false;
  }
  return std::isdigit(static_cast<unsigned char>(w.front())) != 0;
}

}  // namespace

const char* to_string(Pos pos) {
  switch (pos) {
    case Pos::Noun: return "NOUN";
    case Pos::ProperNoun: return "PROPN";
    case Pos::Pronoun: return "PRON";
    case Pos::Verb: return "VERB";
    case Pos::Auxiliary: return "AUX";
    case Pos::Copula: return "COP";
    case Pos::Adjective: return "ADJ";
    case Pos::Adverb: return "ADV";
    case Pos::Determiner: return "DET";
    case Pos::Preposition: return "ADP";
    case Pos::Conjunction: return "CONJ";
    case Pos::WhWord: return "WH";
    case Pos::Number: return "NUM";
    case Pos::To: return "TO";
    case Pos::Punct: return "PUNCT";
  }
  return "?";
}

bool is_known_verb(std::string_view lemma) { return kVerbs.count(lemma) != 0; }
bool is_adjective_word(std::string_view word) { return kAdjectives.count(word) != 0; }
bool is_person_word(std::string_view word) { return kPersonWords.count(word) != 0; }
bool is_location_word(std::string_view word) { return kLocationWords.count(word) != 0; }
bool is_temporal_word(std::string_view word) { return kTemporalWords.count(word) != 0; }
bool is_month(std::string_view word) { return kMonths.count(word) != 0; }

std::string third_singular(std::string_view lemma) {
  for (const auto& irr : irregulars()) {
    if (irr.lemma == lemma) return std::string(irr.third);
  }
  std::string s(lemma);
  if (s.empty()) return s;
  if (ends_with(s, "s") || ends_with(s, "x") || ends_with(s, "z") || ends_with(s, "ch") || ends_with(s, "sh") ||
      (ends_with(s, "o") && s.size() > 1 && !is_vowel(s[s.size() - 2]))) {
    return s + "es";
  }
  if (s.size() > 1 && s.back() == 'y' && !is_vowel(s[s.size() - 2])) return s.substr(0, s.size() - 1) + "ies";
  return s + "s";
}

std::string past_participle(std::string_view lemma) {
  for (const auto& irr : irregulars()) {
    if (irr.lemma == lemma) return std::string(irr.participle);
  }
  std::string s(lemma);
  if (s.empty()) return s;
  if (s.back() == 'e') return s + "d";
  if (s.size() > 1 && s.back() == 'y' && !is_vowel(s[s.size() - 2])) return s.substr(0, s.size() - 1) + "ied";
  if (kDoubling.count(lemma) != 0) return s + s.back() + "ed";
  return s + "ed";
}

std::string past_tense(std::string_view lemma) {
  for (const auto& irr : irregulars()) {
    if (irr.lemma == lemma) return std::string(irr.past);
  }
  return past_participle(lemma);
}

std::string gerund(std::string_view lemma) {
  std::string s(lemma);
  if (s == "be") return "being";
  if (s.size() > 2 && s.back() == 'e' && s[s.size() - 2] != 'e') return s.substr(0, s.size() - 1) + "ing";
  if (kDoubling.count(lemma) != 0) return s + s.back() + "ing";
  return s + "ing";
}

std::string verb_lemma(std::string_view word, VerbForm* form) {
  auto set_form = [&](VerbForm f) {
    if (form != nullptr) *form = f;
  };
  set_form(VerbForm::None);
  const std::string w = casefold(word);
  for (const auto& irr : irregulars()) {
    if (w == irr.lemma) {
      set_form(VerbForm::Base);
      return w;
    }
    if (w == irr.third) {
      set_form(VerbForm::ThirdSingular);
      return std::string(irr.lemma);
    }
    if (w == irr.participle) {
      set_form(irr.participle == irr.past ? VerbForm::Past : VerbForm::Participle);
      return std::string(irr.lemma);
    }
    if (w == irr.past) {
      set_form(VerbForm::Past);
      return std::string(irr.lemma);
    }
  }
  if (kVerbs.count(w) != 0) {
    set_form(VerbForm::Base);
    return w;
  }
  auto try_base = [&](const std::string& base, VerbForm f) -> bool {
    if (!base.empty() && kVerbs.count(base) != 0) {
      set_form(f);
      return true;
    }
    return false;
  };
  if (ends_with(w, "ies") && try_base(w.substr(0, w.size() - 3) + "y", VerbForm::ThirdSingular)) {
    return w.substr(0, w.size() - 3) + "y";
  }
  if (ends_with(w, "es") && try_base(w.substr(0, w.size() - 2), VerbForm::ThirdSingular)) {
    return w.substr(0, w.size() - 2);
  }
  if (ends_with(w, "s") && !ends_with(w, "ss") && try_base(w.substr(0, w.size() - 1), VerbForm::ThirdSingular)) {
    return w.substr(0, w.size() - 1);
  }
  if (ends_with(w, "ied") && try_base(w.substr(0, w.size() - 3) + "y", VerbForm::Past)) {
    return w.substr(0, w.size() - 3) + "y";
  }
  if (ends_with(w, "ed")) {
    std::string stem = w.substr(0, w.size() - 2);
    if (try_base(stem, VerbForm::Past)) return stem;
    if (try_base(stem + "e", VerbForm::Past)) return stem + "e";
    if (stem.size() > 2 && stem.back() == stem[stem.size() - 2] && try_base(stem.substr(0, stem.size() - 1), VerbForm::Past)) {
      return stem.substr(0, stem.size() - 1);
    }
    std::string e_stem = w.substr(0, w.size() - 1);
    if (try_base(e_stem, VerbForm::Past)) return e_stem;
  }
  if (ends_with(w, "ing") && w.size() > 4) {
    std::string stem = w.substr(0, w.size() - 3);
    if (try_base(stem, VerbForm::Gerund)) return stem;
    if (try_base(stem + "e", VerbForm::Gerund)) return stem + "e";
    if (stem.size() > 2 && stem.back() == stem[stem.size() - 2] && try_base(stem.substr(0, stem.size() - 1), VerbForm::Gerund)) {
      return stem.substr(0, stem.size() - 1);
    }
  }
  return {};
}

std::vector<Token> lex(std::string_view sentence) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < sentence.size()) {
    char c = sentence[i];
    if (std::isspace(static_cast<unsigned char>(c)) != 0) {
      ++i;
      continue;
    }
    Token tok;
    tok.begin = i;
    if (is_word_char(c)) {
      while (i < sentence.size()) {
        char d = sentence[i];
        if (is_word_char(d)) {
          ++i;
        } else if ((d == '-' || d == '\'' || d == '.' || d == ':' || d == '/') && i + 1 < sentence.size() &&
                   is_word_char(sentence[i + 1]) &&
                   (d == '-' || d == '\'' ||
                    std::isdigit(static_cast<unsigned char>(sentence[i - 1])) != 0)) {
          ++i;
        } else {
          break;
        }
      }
    } else {
      ++i;
    }
    tok.end = i;
    tok.text = std::string(sentence.substr(tok.begin, tok.end - tok.begin));
    tok.lower = casefold(tok.text);
    tok.lemma = tok.lower;
    out.push_back(std::move(tok));
  }
  return out;
}

std::vector<Token> LexiconTagger::tag(std::string_view sentence) const {
  auto tokens = lex(sentence);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    auto& t = tokens[i];
    const std::string& w = t.lower;
    if (!is_word_char(t.text.front())) {
      t.pos = Pos::Punct;
    } else if (is_number(w)) {
      t.pos = Pos::Number;
    } else if (w == "to") {
      t.pos = Pos::To;
    } else if (kCopulas.count(w) != 0) {
      t.pos = Pos::Copula;
      t.lemma = "be";
      t.form = w == "be" ? VerbForm::Base : (w == "been" ? VerbForm::Participle : VerbForm::ThirdSingular);
    } else if (kAuxiliaries.count(w) != 0) {
      t.pos = Pos::Auxiliary;
    } else if (kWhWords.count(w) != 0) {
      t.pos = Pos::WhWord;
    } else if (kDeterminers.count(w) != 0) {
      t.pos = Pos::Determiner;
    } else if (kPronouns.count(w) != 0) {
      t.pos = Pos::Pronoun;
    } else if (kPrepositions.count(w) != 0) {
      t.pos = Pos::Preposition;
    } else if (kConjunctions.count(w) != 0) {
      t.pos = Pos::Conjunction;
    } else if (kAdverbs.count(w) != 0) {
      t.pos = Pos::Adverb;
    } else if (kAdjectives.count(w) != 0) {
      t.pos = Pos::Adjective;
    } else {
      VerbForm form = VerbForm::None;
      std::string lemma = verb_lemma(w, &form);
      if (!lemma.empty()) {
        t.pos = Pos::Verb;
        t.lemma = lemma;
        t.form = form;
      } else if (w.size() > 3 && ends_with(w, "ly")) {
        t.pos = Pos::Adverb;
      } else if (i > 0 && std::isupper(static_cast<unsigned char>(t.text.front())) != 0) {
        t.pos = Pos::ProperNoun;
      } else {
        t.pos = Pos::Noun;
      }
    }
  }

  // Contextual repairs.
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    auto& t = tokens[i];
    if (t.pos != Pos::Verb) continue;
    const Pos prev = i > 0 ? tokens[i - 1].pos : Pos::Punct;
    const bool after_modifier = prev == Pos::Determiner || prev == Pos::Adjective ||
                                (prev == Pos::Noun && kNounFirst.count(t.lower) != 0 && t.form == VerbForm::Base);
    if (after_modifier) {
      if (t.form == VerbForm::Gerund || t.form == VerbForm::Participle ||
          (t.form == VerbForm::Past && prev == Pos::Determiner)) {
        t.pos = Pos::Adjective;
      } else {
        t.pos = Pos::Noun;
      }
      t.lemma = t.lower;
      t.form = VerbForm::None;
      continue;
    }
    // "credit card", "email address": an ambiguous base form directly
    // followed by a noun is a noun modifier unless something verbal precedes.
    if (kNounFirst.count(t.lower) != 0 && t.form == VerbForm::Base && i + 1 < tokens.size() &&
        tokens[i + 1].is_nominal() && prev != Pos::To && prev != Pos::Auxiliary && prev != Pos::Pronoun) {
      t.pos = Pos::Noun;
      t.lemma = t.lower;
      t.form = VerbForm::None;
    }
  }
  return tokens;
}

const Tagger& default_tagger() {
  static const LexiconTagger tagger;
  return tagger;
}

}  // namespace deskqa::nlp
