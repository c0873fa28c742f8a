#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "csdm/data.hpp"

namespace csdm {

int FeatureSchema::user_field() const {
    for (std::size_t i = 0; i < fields.size(); ++i)
        if (fields[i].kind == FieldKind::UserId) return static_cast<int>(i);
    return -1;
}

int FeatureSchema::item_field() const {
    for (std::size_t i = 0; i < fields.size(); ++i)
        if (fields[i].kind == FieldKind::ItemId) return static_cast<int>(i);
    return -1;
}

std::vector<int> FeatureSchema::side_fields() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < fields.size(); ++i)
        if (fields[i].side_info) out.push_back(static_cast<int>(i));
    return out;
}

std::vector<int> FeatureSchema::item_feature_fields() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < fields.size(); ++i)
        if (fields[i].kind == FieldKind::ItemFeature)
            out.push_back(static_cast<int>(i));
    return out;
}

void FeatureSchema::validate() const {
    if (user_field() < 0 || item_field() < 0)
        throw ValidationError("schema: must contain user-id and item-id fields");
    for (const auto& f : fields) {
        if (f.kind == FieldKind::ItemId && f.side_info)
            throw ValidationError("schema: item-id field cannot be side information");
        if (f.side_info && f.kind != FieldKind::ItemFeature)
            throw ValidationError("schema: side information must be an item feature");
        if (f.vocab <= 0)
            throw ValidationError("schema: field '" + f.name + "' has empty vocabulary");
    }
}

int binarize(int rating) {
    if (rating < 1 || rating > 5)
        throw ValidationError("binarize: rating must be in 1..5, got " +
                              std::to_string(rating));
    return rating >= 4 ? 1 : 0;
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (true) {
        std::size_t next = line.find("::", pos);
        if (next == std::string::npos) {
            out.push_back(line.substr(pos));
            break;
        }
        out.push_back(line.substr(pos, next - pos));
        pos = next + 2;
    }
    return out;
}

int64_t parse_int(const std::string& s, const std::string& file, int lineno) {
    try {
        std::size_t used = 0;
        int64_t v = std::stoll(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ParseError(file + ":" + std::to_string(lineno) +
                         ": expected integer, got '" + s + "'");
    }
}

std::string strip_cr(std::string s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == '\n')) s.pop_back();
    return s;
}

std::ifstream open_or_throw(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    return f;
}

// "Toy Story (1995)" -> 1995; 0 when no trailing year.
int32_t year_from_title(const std::string& title) {
    const std::size_t close = title.rfind(')');
    if (close == std::string::npos || close < 5) return 0;
    const std::size_t open = title.rfind('(', close);
    if (open == std::string::npos || close - open != 5) return 0;
    int32_t y = 0;
    for (std::size_t i = open + 1; i < close; ++i) {
        if (!std::isdigit(static_cast<unsigned char>(title[i]))) return 0;
        y = y * 10 + (title[i] - '0');
    }
    return y;
}

}  // namespace

MovieLensRaw load_movielens(const std::string& dir) {
    MovieLensRaw raw;
    {
        const std::string path = dir + "/ratings.dat";
        auto f = open_or_throw(path);
        std::string line;
        int lineno = 0;
        while (std::getline(f, line)) {
            ++lineno;
            line = strip_cr(line);
            if (line.empty()) continue;
            auto fs = split_fields(line);
            if (fs.size() != 4)
                throw ParseError(path + ":" + std::to_string(lineno) +
                                 ": expected 4 '::' fields");
            raw.ratings.push_back(
                {static_cast<int32_t>(parse_int(fs[0], path, lineno)),
                 static_cast<int32_t>(parse_int(fs[1], path, lineno)),
                 static_cast<int32_t>(parse_int(fs[2], path, lineno)),
                 parse_int(fs[3], path, lineno)});
        }
        if (raw.ratings.empty()) throw ParseError(path + ": dataset is empty");
    }
    {
        const std::string path = dir + "/users.dat";
        auto f = open_or_throw(path);
        std::string line;
        int lineno = 0;
        while (std::getline(f, line)) {
            ++lineno;
            line = strip_cr(line);
            if (line.empty()) continue;
            auto fs = split_fields(line);
            if (fs.size() != 5)
                throw ParseError(path + ":" + std::to_string(lineno) +
                                 ": expected 5 '::' fields");
            MovieLensRaw::User u;
            u.gender = fs[1].empty() ? 'M' : fs[1][0];
            u.age = static_cast<int32_t>(parse_int(fs[2], path, lineno));
            u.occupation = static_cast<int32_t>(parse_int(fs[3], path, lineno));
            raw.users[static_cast<int32_t>(parse_int(fs[0], path, lineno))] = u;
        }
    }
    {
        const std::string path = dir + "/movies.dat";
        auto f = open_or_throw(path);
        std::string line;
        int lineno = 0;
        while (std::getline(f, line)) {
            ++lineno;
            line = strip_cr(line);
            if (line.empty()) continue;
            auto fs = split_fields(line);
            if (fs.size() != 3)
                throw ParseError(path + ":" + std::to_string(lineno) +
                                 ": expected 3 '::' fields");
            MovieLensRaw::Movie m;
            m.title = fs[1];
            m.year = year_from_title(fs[1]);
            std::stringstream gs(fs[2]);
            std::string g;
            while (std::getline(gs, g, '|'))
                if (!g.empty()) m.genres.push_back(g);
            raw.movies[static_cast<int32_t>(parse_int(fs[0], path, lineno))] =
                std::move(m);
        }
    }
    return raw;
}

Dataset encode_movielens(const MovieLensRaw& raw) {
    Dataset out;

    // Dense indices in first-appearance order over the ratings stream so the
    // encoding is a pure function of the input files.
    std::unordered_map<int32_t, int32_t> user_idx, item_idx;
    for (const auto& r : raw.ratings) {
        user_idx.emplace(r.user, static_cast<int32_t>(user_idx.size()));
        item_idx.emplace(r.movie, static_cast<int32_t>(item_idx.size()));
    }
    out.n_users = static_cast<int32_t>(user_idx.size());
    out.n_items = static_cast<int32_t>(item_idx.size());

    // Vocabularies for the categorical user/item attributes (ordered maps so
    // the index assignment is input-order independent).
    std::map<int32_t, int32_t> age_idx, occ_idx, decade_idx;
    std::map<std::string, int32_t> genre_idx;
    for (const auto& [id, u] : raw.users) {
        age_idx.emplace(u.age, 0);
        occ_idx.emplace(u.occupation, 0);
    }
    for (const auto& [id, m] : raw.movies) {
        decade_idx.emplace(m.year / 10, 0);
        for (const auto& g : m.genres) genre_idx.emplace(g, 0);
    }
    int32_t next = 0;
    for (auto& [k, v] : age_idx) v = next++;
    next = 0;
    for (auto& [k, v] : occ_idx) v = next++;
    next = 0;
    for (auto& [k, v] : decade_idx) v = next++;
    next = 0;
    for (auto& [k, v] : genre_idx) v = next++;

    out.schema.fields = {
        {"user_id", FieldKind::UserId, out.n_users, false, false},
        {"gender", FieldKind::UserFeature, 2, false, false},
        {"age", FieldKind::UserFeature, static_cast<int32_t>(age_idx.size()),
         false, false},
        {"occupation", FieldKind::UserFeature,
         static_cast<int32_t>(occ_idx.size()), false, false},
        {"item_id", FieldKind::ItemId, out.n_items, false, false},
        {"decade", FieldKind::ItemFeature,
         static_cast<int32_t>(decade_idx.size()), true, false},
        {"genres", FieldKind::ItemFeature,
         static_cast<int32_t>(genre_idx.size()), true, true},
    };
    out.schema.validate();

    // Per-item feature table (decade one-hot, genres multi-hot).
    out.items.field_pos = {5, 6};
    out.items.values.assign(2, std::vector<std::vector<int32_t>>(out.n_items));
    for (const auto& [movie, idx] : item_idx) {
        auto it = raw.movies.find(movie);
        if (it == raw.movies.end())
            throw ValidationError("encode: rated movie " +
                                  std::to_string(movie) +
                                  " missing from movies.dat");
        const auto& m = it->second;
        out.items.values[0][idx] = {decade_idx.at(m.year / 10)};
        std::vector<int32_t> gs;
        for (const auto& g : m.genres) gs.push_back(genre_idx.at(g));
        std::sort(gs.begin(), gs.end());
        if (gs.empty()) gs.push_back(0);  // ML-1M has no genre-less movies
        out.items.values[1][idx] = std::move(gs);
    }

    out.instances.reserve(raw.ratings.size());
    for (const auto& r : raw.ratings) {
        auto uit = raw.users.find(r.user);
        if (uit == raw.users.end())
            throw ValidationError("encode: user " + std::to_string(r.user) +
                                  " missing from users.dat");
        const auto& u = uit->second;
        EncodedInstance e;
        e.user_idx = user_idx.at(r.user);
        e.item_idx = item_idx.at(r.movie);
        const int32_t item = e.item_idx;
        e.feats = {e.user_idx,
                   u.gender == 'F' ? 1 : 0,
                   age_idx.at(u.age),
                   occ_idx.at(u.occupation),
                   item,
                   out.items.values[0][item][0],
                   -1};
        e.label = static_cast<int8_t>(binarize(r.rating));
        e.ts = r.ts;
        out.instances.push_back(std::move(e));
    }
    return out;
}

}  // namespace csdm
