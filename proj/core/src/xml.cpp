// Copyright 2026 The KVAF Toolkit Authors.
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "kvaf/xml.hpp"

#include <cctype>

#include "kvaf/error.hpp"

namespace kvaf::xml {

std::optional<std::string> Element::attribute(std::string_view key) const {
  for (const auto& [k, v] : attributes) {
    if (k == key) return v;
  }
  return std::nullopt;
}

const Element* Element::first_child(std::string_view child_name) const {
  for (const auto& c : children) {
    if (c.name == child_name) return &c;
  }
  return nullptr;
}

std::vector<const Element*> Element::children_named(std::string_view child_name) const {
  std::vector<const Element*> out;
  for (const auto& c : children) {
    if (c.name == child_name) out.push_back(&c);
  }
  return out;
}

namespace {

class Reader {
 public:
  explicit Reader(std::string_view text) : text_(text) {}

  Element document() {
    skip_misc();
    if (at_end()) throw ParseError("document has no root element", line_);
    Element root = element();
    skip_misc();
    if (!at_end()) throw ParseError("content after root element </" + root.name + ">", line_);
    return root;
  }

 private:
  bool at_end() const { return pos_ >= text_.size(); }
  char peek(size_t off = 0) const { return pos_ + off < text_.size() ? text_[pos_ + off] : '\0'; }
  bool starts_with(std::string_view s) const { return text_.substr(pos_, s.size()) == s; }

  void advance(size_t n = 1) {
    for (size_t i = 0; i < n && pos_ < text_.size(); ++i) {
      if (text_[pos_] == '\n') ++line_;
      ++pos_;
    }
  }

  void skip_ws() {
    while (!at_end() && std::isspace(static_cast<unsigned char>(peek()))) advance();
  }

  void skip_until(std::string_view terminator, const char* what) {
    const int start = line_;
    while (!at_end() && !starts_with(terminator)) advance();
    if (at_end()) throw ParseError(std::string("unterminated ") + what, start);
    advance(terminator.size());
  }

  // Whitespace, comments, processing instructions, and doctype.
  void skip_misc() {
    for (;;) {
      skip_ws();
      if (starts_with("<!--")) {
        skip_until("-->", "comment");
      } else if (starts_with("<?")) {
        skip_until("?>", "processing instruction");
      } else if (starts_with("<!DOCTYPE")) {
        skip_until(">", "doctype");
      } else {
        return;
      }
    }
  }

  static bool name_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.' ||
           c == ':';
  }

  std::string name() {
    const size_t start = pos_;
    while (!at_end() && name_char(peek())) advance();
    if (pos_ == start) throw ParseError("expected a name", line_);
    return std::string(text_.substr(start, pos_ - start));
  }

  std::string decode(std::string_view raw, int line) const {
    std::string out;
    out.reserve(raw.size());
    for (size_t i = 0; i < raw.size(); ++i) {
      if (raw[i] != '&') {
        out.push_back(raw[i]);
        continue;
      }
      const size_t semi = raw.find(';', i);
      if (semi == std::string_view::npos) throw ParseError("unterminated entity", line);
      const std::string_view ent = raw.substr(i + 1, semi - i - 1);
      if (ent == "amp") out.push_back('&');
      else if (ent == "lt") out.push_back('<');
      else if (ent == "gt") out.push_back('>');
      else if (ent == "quot") out.push_back('"');
      else if (ent == "apos") out.push_back('\'');
      else throw ParseError("unknown entity &" + std::string(ent) + ";", line);
      i = semi;
    }
    return out;
  }

  Element element() {
    if (peek() != '<') throw ParseError("expected '<'", line_);
    Element el;
    el.line = line_;
    advance();
    el.name = name();
    for (;;) {
      skip_ws();
      if (at_end()) throw ParseError("element <" + el.name + "> is not closed", el.line);
      if (starts_with("/>")) {
        advance(2);
        return el;
      }
      if (peek() == '>') {
        advance();
        break;
      }
      const int attr_line = line_;
      std::string key = name();
      skip_ws();
      if (peek() != '=') {
        throw ParseError("attribute '" + key + "' of <" + el.name + "> has no value", attr_line);
      }
      advance();
      skip_ws();
      const char quote = peek();
      if (quote != '"' && quote != '\'') {
        throw ParseError("attribute '" + key + "' of <" + el.name + "> is not quoted", attr_line);
      }
      advance();
      const size_t start = pos_;
      while (!at_end() && peek() != quote) {
        if (peek() == '<') {
          throw ParseError("unterminated attribute '" + key + "' in <" + el.name + ">", attr_line);
        }
        advance();
      }
      if (at_end()) {
        throw ParseError("unterminated attribute '" + key + "' in <" + el.name + ">", attr_line);
      }
      el.attributes.emplace_back(std::move(key), decode(text_.substr(start, pos_ - start), attr_line));
      advance();
    }

    // Content until the matching end tag.
    for (;;) {
      while (!at_end() && peek() != '<') advance();
      if (at_end()) throw ParseError("element <" + el.name + "> is not closed", el.line);
      if (starts_with("<!--")) {
        skip_until("-->", "comment");
      } else if (starts_with("<![CDATA[")) {
        skip_until("]]>", "CDATA section");
      } else if (starts_with("<?")) {
        skip_until("?>", "processing instruction");
      } else if (starts_with("</")) {
        const int close_line = line_;
        advance(2);
        const std::string closing = name();
        skip_ws();
        if (peek() != '>') throw ParseError("malformed end tag </" + closing + ">", close_line);
        advance();
        if (closing != el.name) {
          throw ParseError("element <" + el.name + "> opened at line " + std::to_string(el.line) +
                               " is closed by </" + closing + ">",
                           close_line);
        }
        return el;
      } else {
        el.children.push_back(element());
      }
    }
  }

  std::string_view text_;
  size_t pos_ = 0;
  int line_ = 1;
};

}  // namespace

Element parse(std::string_view text) { return Reader(text).document(); }

}  // namespace kvaf::xml
